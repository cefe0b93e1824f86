use std::fmt;
use std::io::{Read, Write};

use ctbot_core::controller::server::Pacing;
use ctbot_core::kinematics::{solve_dls, IkParams, IkSolution, JointType, JointVector, NUM_JOINTS};
use ctbot_core::sim::{SimConfig, Simulator};
use ctbot_core::statics::StaticsReport;
use ctbot_core::teleop::protocol::{ClientMessage, WirePose};
use ctbot_core::teleop::trace::read_trace;
use ctbot_core::workspace::{run_study, StudyConfig};
use ctbot_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::cli::{Cli, Command, FkArgs, IkArgs, ModelArgs, ReplayArgs, ServeArgs, SimArgs, StaticsArgs, WorkspaceArgs};
use crate::config::Loaded;
use crate::http::StaticSite;
use crate::parse::{format_pose, parse_pose};
use crate::serve::{self, ServeOptions, DEFAULT_COCKPIT_PORT, DEFAULT_PORT};

/// Error carrying its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: the inputs were fine but the answer is negative or the host failed.
    Domain(String),
    /// Exit 2: bad flags, unparsable input, limit violations, invalid files.
    Usage(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Domain(m) | Failure::Usage(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalFailure(_) | Error::ConnectionLost(_) | Error::Io(_) => Failure::Domain(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli, out: &mut dyn Write) -> Outcome {
    let loaded = Loaded::resolve(cli.config.as_deref(), cli.model.as_deref(), cli.scene.as_deref())
        .map_err(Failure::Usage)?;
    let result = match cli.command {
        Command::Model(a) => model(&loaded, &a, out),
        Command::Fk(a) => fk(&loaded, &a, out),
        Command::Ik(a) => ik(&loaded, &a, out),
        Command::Statics(a) => statics(&loaded, &a, out),
        Command::Workspace(a) => workspace(&loaded, &a, out),
        Command::Serve(a) => serve(loaded, &a, out),
        Command::Replay(a) => replay(loaded, &a, out),
    };
    out.flush().map_err(|e| Failure::Domain(e.to_string()))?;
    result
}

fn io(e: std::io::Error) -> Failure {
    Failure::Domain(e.to_string())
}

fn json_line(out: &mut dyn Write, value: &serde_json::Value) -> Outcome {
    writeln!(out, "{value}").map_err(io)
}

fn model(loaded: &Loaded, args: &ModelArgs, out: &mut dyn Write) -> Outcome {
    let m = &loaded.model;
    let limits = &m.chain.limits;
    if args.json {
        let dh: Vec<_> = m
            .chain
            .dh
            .rows
            .iter()
            .map(|r| json!({"type": r.joint_type, "a": r.a, "alpha": r.alpha, "d": r.d_offset, "theta": r.theta_offset}))
            .collect();
        return json_line(
            out,
            &json!({
                "dh": dh,
                "limits": {"lower": limits.lower, "upper": limits.upper},
                "mixing": m.mixing.rows(),
                "encoder": m.encoder,
                "resolution_deg": m.encoder.resolution_deg(),
                "cable_run": m.cable_run,
                "lever": m.lever,
                "load_rating": m.load_rating,
            }),
        );
    }
    let mut s = String::from("frame  type       a          alpha      d          theta      limits\n");
    for (i, r) in m.chain.dh.rows.iter().enumerate() {
        let kind = match r.joint_type {
            JointType::Prismatic => "prismatic",
            JointType::Revolute => "revolute",
            JointType::Fixed => "fixed",
        };
        let range = if i < NUM_JOINTS {
            format!("[{:.4}, {:.4}]", limits.lower[i], limits.upper[i])
        } else {
            String::new()
        };
        s += &format!(
            "{:<6} {kind:<10} {:<10.4} {:<10.4} {:<10.4} {:<10.4} {range}\n",
            i + 1,
            r.a,
            r.alpha,
            r.d_offset,
            r.theta_offset
        );
    }
    s += "\nmixing (joint = M actuator)\n";
    for row in m.mixing.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.4e}")).collect();
        s += &format!("  {}\n", cells.join(" "));
    }
    s += &format!(
        "\nencoder  {} counts/motor rev x {}:1 = {} counts/output rev, {:.5e} deg/count\n",
        m.encoder.counts_per_motor_rev,
        m.encoder.gear_ratio,
        m.encoder.counts_per_output_rev(),
        m.encoder.resolution_deg()
    );
    s += &format!(
        "cable    {} L0={} m A={} m² r={} m, lever {} m\n",
        m.cable_run.material.name,
        m.cable_run.free_length,
        m.cable_run.cross_section,
        m.cable_run.drive_pulley_radius,
        m.lever
    );
    out.write_all(s.as_bytes()).map_err(io)
}

fn joint_vector(values: &[f64]) -> JointVector {
    let mut q = [0.0; NUM_JOINTS];
    q.copy_from_slice(values);
    JointVector::from_array(q)
}

fn fk(loaded: &Loaded, args: &FkArgs, out: &mut dyn Write) -> Outcome {
    let q = joint_vector(&args.q);
    let frame = usize::from(args.frame);
    let pose = loaded.model.chain.forward(&q, frame)?;
    if args.json {
        let w = WirePose::from(&pose);
        json_line(out, &json!({"frame": frame, "position": w.position, "rotation": w.rotation}))
    } else {
        out.write_all(format_pose(frame, &pose).as_bytes()).map_err(io)
    }
}

fn ik(loaded: &Loaded, args: &IkArgs, out: &mut dyn Write) -> Outcome {
    let text = if args.pose.is_empty() {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(io)?;
        s
    } else {
        args.pose.join(" ")
    };
    let target = parse_pose(&text).map_err(Failure::Usage)?;
    let chain = &loaded.model.chain;
    let mut params = IkParams::default();
    if let Some(d) = args.damping {
        params.damping = d;
    }
    if let Some(n) = args.max_iterations {
        params.max_iterations = n;
    }
    let first = match &args.q0 {
        Some(v) => joint_vector(v),
        None => chain.limits.center(),
    };

    // Deterministic restarts: the same flags always try the same starts.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut best: Option<IkSolution> = None;
    let mut attempts = 0;
    for k in 0..=args.restarts {
        let q0 = if k == 0 {
            first
        } else {
            let u: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.random::<f64>());
            chain.limits.lerp(&u)
        };
        let sol = solve_dls(chain, &q0, &target, &params, None)?;
        attempts += 1;
        let score = |s: &IkSolution| (s.position_residual / params.position_tol).max(s.orientation_residual / params.orientation_tol);
        if best.as_ref().is_none_or(|b| score(&sol) < score(b)) {
            best = Some(sol);
        }
        if sol.converged {
            break;
        }
    }
    let sol = best.expect("at least one attempt runs");
    if args.json {
        json_line(
            out,
            &json!({
                "converged": sol.converged,
                "q": sol.q.to_array(),
                "position_residual": sol.position_residual,
                "orientation_residual": sol.orientation_residual,
                "iterations": sol.iterations,
                "attempts": attempts,
            }),
        )?;
    } else {
        let q: Vec<String> = sol.q.to_array().iter().map(|v| format!("{v:?}")).collect();
        write!(
            out,
            "converged             {}\nq                     {}\nposition residual     {:.3e} m\norientation residual  {:.3e} rad\niterations            {} (attempt {attempts})\n",
            sol.converged,
            q.join(" "),
            sol.position_residual,
            sol.orientation_residual,
            sol.iterations
        )
        .map_err(io)?;
    }
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "IK did not converge after {attempts} attempts (residual {:.3e} m, {:.3e} rad)",
            sol.position_residual, sol.orientation_residual
        )))
    }
}

fn statics(loaded: &Loaded, args: &StaticsArgs, out: &mut dyn Write) -> Outcome {
    let m = &loaded.model;
    let report = StaticsReport::compute(args.force, &m.cable_run, m.lever, &m.load_rating)?;
    if args.json {
        json_line(out, &serde_json::to_value(&report).expect("report serializes"))
    } else {
        write!(out, "{report}").map_err(io)
    }
}

fn workspace(loaded: &Loaded, args: &WorkspaceArgs, out: &mut dyn Write) -> Outcome {
    let targets = match &args.targets {
        Some(p) => ctbot_core::model::read_vertices(p).map_err(|e| Failure::Usage(format!("targets {}: {e}", p.display())))?,
        None => loaded.scene.targets(),
    };
    let cfg = StudyConfig {
        samples: args.samples,
        seed: args.seed,
        radius: args.radius,
        cone_targets: Vec::new(),
    };
    let result = run_study(&loaded.scene, &loaded.body, &loaded.model.chain, &targets, &cfg)?;
    let csv = result.heatmap.to_csv();
    match &args.out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?,
        None => out.write_all(csv.as_bytes()).map_err(io)?,
    }
    let reached = result.heatmap.counts.iter().filter(|&&c| c > 0).count();
    let lung = loaded.scene.lung_targets(&targets);
    let lung_reached = lung.iter().filter(|&&i| result.heatmap.counts[i] > 0).count();
    eprintln!(
        "{} samples, {:.2}% collision-free; {reached}/{} targets reached, {lung_reached}/{} in the lung region",
        result.samples,
        100.0 * result.collision_free_fraction(),
        targets.len(),
        lung.len()
    );
    Ok(())
}

fn sim_config(loaded: &Loaded, args: &SimArgs) -> Result<SimConfig, Failure> {
    let mut cfg = loaded.sim_config().map_err(Failure::Usage)?;
    if let Some(dt) = args.timestep {
        cfg.controller.dt = dt;
    }
    if let Some(rate) = args.teleop_rate_hz {
        cfg.teleop_rate_hz = rate;
    }
    // The guard is on unless explicitly disabled, whatever the config file says.
    cfg.teleop.collision_guard = !args.no_collision_guard;
    Ok(cfg)
}

fn simulator(loaded: Loaded, args: &SimArgs) -> Result<Simulator, Failure> {
    let cfg = sim_config(&loaded, args)?;
    Ok(Simulator::new(loaded.model, loaded.scene, loaded.body, cfg)?)
}

fn serve(loaded: Loaded, args: &ServeArgs, out: &mut dyn Write) -> Outcome {
    let section = loaded.file.serve.clone();
    let sim = simulator(loaded, &args.sim)?;
    let heatmap = args.heatmap.clone().or(section.heatmap);
    if let Some(h) = &heatmap {
        if !h.is_file() {
            return Err(Failure::Usage(format!("heat map {} does not exist", h.display())));
        }
    }
    let cockpit_dir = args.cockpit_dir.clone().or(section.cockpit_dir);
    if let Some(d) = &cockpit_dir {
        if !d.is_dir() {
            return Err(Failure::Usage(format!("cockpit directory {} does not exist", d.display())));
        }
    }
    let opts = ServeOptions {
        bind: args.bind.or(section.bind).unwrap_or(ServeOptions::default().bind),
        port: args.port.or(section.port).unwrap_or(DEFAULT_PORT),
        cockpit_port: args.cockpit_port.or(section.cockpit_port).unwrap_or(DEFAULT_COCKPIT_PORT),
        pacing: if args.fast { Pacing::Lockstep } else { Pacing::Realtime },
        state_every: args.state_every,
        trace: args.trace.clone(),
        site: StaticSite {
            root: cockpit_dir,
            heatmap,
        },
    };
    let handle = serve::start(sim, opts).map_err(|e| Failure::Domain(format!("cannot start server: {e}")))?;
    writeln!(out, "controller listening on {}", handle.controller_addr).map_err(io)?;
    writeln!(out, "cockpit listening on http://{}/", handle.cockpit_addr).map_err(io)?;
    out.flush().map_err(io)?;
    handle.wait();
    Ok(())
}

fn replay(loaded: Loaded, args: &ReplayArgs, out: &mut dyn Write) -> Outcome {
    let trace = read_trace::<ClientMessage>(&args.trace)?;
    let mut sim = simulator(loaded, &args.sim)?;
    sim.replay(&trace)?;
    let snapshot = sim.snapshot();
    json_line(out, &serde_json::to_value(&snapshot).expect("snapshot serializes"))
}
