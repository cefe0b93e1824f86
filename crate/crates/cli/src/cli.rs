use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::parse::parse_timestep;

/// Digital twin of a 7-DoF CT-guided biopsy arm.
///
/// Exit status: 0 on success, 1 when a solver does not converge or the host
/// fails at runtime, 2 on usage, parse, limit or configuration errors.
#[derive(Debug, Parser)]
#[command(name = "ctbot", version)]
pub struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Robot model file (defaults to the shipped arm).
    #[arg(long, global = true, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Scene file (defaults to the shipped bore, patient and table).
    #[arg(long, global = true, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the loaded robot model.
    Model(ModelArgs),
    /// Forward kinematics: pose of a DH frame for seven joint values.
    Fk(FkArgs),
    /// Damped-least-squares inverse kinematics for a tool pose.
    Ik(IkArgs),
    /// Needle-load torques, cable stiffness and load-rating verdicts.
    Statics(StaticsArgs),
    /// Monte Carlo reachability study; writes the heat-map CSV.
    Workspace(WorkspaceArgs),
    /// Run the simulator with the setpoint server and the cockpit endpoint.
    Serve(ServeArgs),
    /// Replay a cockpit trace offline and print the final state as JSON.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FkArgs {
    /// Joint values q1..q7 (m for q1, q2, q7; rad otherwise).
    #[arg(num_args = 7, required = true, allow_negative_numbers = true, value_name = "Q")]
    pub q: Vec<f64>,
    /// DH frame to report, 1..=8; 8 is the needle tool frame.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub frame: u8,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// Target pose: `ctbot fk` output (text or JSON) or 12 numbers (position,
    /// then rotation row-major). Read from stdin when omitted.
    #[arg(allow_negative_numbers = true, value_name = "POSE")]
    pub pose: Vec<String>,
    /// First initial guess (defaults to the middle of every joint range).
    #[arg(long, num_args = 7, allow_negative_numbers = true, value_name = "Q")]
    pub q0: Option<Vec<f64>>,
    /// Extra random in-limit starts tried when the first does not converge.
    #[arg(long, default_value_t = 32)]
    pub restarts: usize,
    /// Seed for the restart starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StaticsArgs {
    /// Needle thrust in newtons.
    #[arg(long, default_value_t = ctbot_core::statics::BIOPSY_NEEDLE_FORCE)]
    pub force: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct WorkspaceArgs {
    #[arg(long, default_value_t = ctbot_core::workspace::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target vertices in the bore frame, one `x y z` per line (defaults to the
    /// scene's targets).
    #[arg(long, value_name = "FILE")]
    pub targets: Option<PathBuf>,
    /// Binning radius in metres.
    #[arg(long, default_value_t = ctbot_core::workspace::DEFAULT_RADIUS)]
    pub radius: f64,
    /// Heat-map CSV destination (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Settings shared by `serve` and `replay`, so a replay can reproduce a served session.
#[derive(Debug, Args)]
pub struct SimArgs {
    /// Controller period, e.g. `1ms`, `500us`, `0.001`.
    #[arg(long, value_parser = parse_timestep)]
    pub timestep: Option<f64>,
    #[arg(long)]
    pub teleop_rate_hz: Option<u32>,
    /// Let teleop command configurations that collide with the scene.
    #[arg(long)]
    pub no_collision_guard: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub bind: Option<IpAddr>,
    /// Setpoint-protocol TCP port; 0 picks a free port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Cockpit HTTP and WebSocket port; 0 picks a free port.
    #[arg(long)]
    pub cockpit_port: Option<u16>,
    /// Tick at wall-clock rate (the default).
    #[arg(long, conflicts_with = "fast")]
    pub realtime: bool,
    /// Lockstep: time advances only on `step` messages.
    #[arg(long)]
    pub fast: bool,
    /// Realtime telemetry period in ticks.
    #[arg(long, default_value_t = crate::serve::DEFAULT_STATE_EVERY)]
    pub state_every: u64,
    /// Directory of cockpit static files.
    #[arg(long, value_name = "DIR")]
    pub cockpit_dir: Option<PathBuf>,
    /// Heat-map CSV served at /heatmap.csv.
    #[arg(long, value_name = "FILE")]
    pub heatmap: Option<PathBuf>,
    /// Record every cockpit message with its tick to this file.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Trace file, one JSON object per line.
    pub trace: PathBuf,
}
