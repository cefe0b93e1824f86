//! Digital twin of a 7-DoF serial-link CT-guided biopsy arm.
//!
//! - [`kinematics`]: modified-DH forward kinematics, Jacobian and damped-least-squares IK
//! - [`transmission`]: actuator/joint mixing and encoder quantization
//! - [`statics`]: needle-load torques, cable stiffness and load ratings
//! - [`scene`]: bore, patient and robot collision geometry
//! - [`workspace`]: Monte Carlo collision-free reachability and heat maps
//! - [`controller`]: emulated 8-axis PID motor controller and its TCP protocol
//! - [`teleop`]: 400 Hz pose-integration teleoperation pipeline
//! - [`sim`]: controller and teleop stepped together on one simulated clock
//! - [`harness`]: repeatability and target-board measurement harnesses

pub mod controller;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod model;
pub mod scene;
pub mod sim;
pub mod statics;
pub mod teleop;
pub mod transmission;
pub mod workspace;

pub use error::{Error, Result};
pub use kinematics::{JointVector, KinematicChain, Pose};
pub use model::RobotModel;
