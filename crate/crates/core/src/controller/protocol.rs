//! Line-delimited JSON setpoint protocol.
//!
//! Each request and reply is one JSON object on one line, terminated by `\n`.
//! Requests carry a `"cmd"` tag, replies a `"reply"` tag:
//!
//! ```text
//! {"cmd":"set_setpoints","setpoints":[0,0,0,0,0,0,0,0]}   -> {"reply":"ok"} | {"reply":"rejected","axes":[...]}
//! {"cmd":"enable"}                                        -> {"reply":"ok"}
//! {"cmd":"disable"}                                       -> {"reply":"ok"}
//! {"cmd":"estop"}                                         -> {"reply":"ok"}
//! {"cmd":"status"}                                        -> {"reply":"status",...}
//! {"cmd":"step","ticks":50}                               -> {"reply":"status",...}   (lockstep hosts only)
//! anything else                                           -> {"reply":"error","message":"..."}
//! ```
//!
//! Every request gets exactly one reply, in order. Setpoints are encoder counts.

use serde::{Deserialize, Serialize};

use super::NUM_AXES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    SetSetpoints { setpoints: [i64; NUM_AXES] },
    Enable,
    Disable,
    Estop,
    Status,
    /// Advance a lockstep host by `ticks` control periods, then report status.
    Step { ticks: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRejection {
    /// 1-based axis number.
    pub axis: usize,
    pub value: i64,
    pub min: i64,
    pub max: i64,
    pub reason: String,
}

/// Wall-clock pacing figures; all zero on a host that is not paced in real time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub ticks: u64,
    pub mean_period_us: f64,
    pub max_period_us: f64,
    /// Ticks that started later than one period after the previous one.
    pub overruns: u64,
}

impl LoopStats {
    pub fn record_period(&mut self, period_us: f64, nominal_us: f64, samples: u64) {
        self.ticks = samples;
        let n = samples.max(1) as f64;
        self.mean_period_us += (period_us - self.mean_period_us) / n;
        self.max_period_us = self.max_period_us.max(period_us);
        if period_us > 2.0 * nominal_us {
            self.overruns += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub tick: u64,
    pub time: f64,
    pub enabled: bool,
    pub estop_latched: bool,
    pub watchdog_tripped: bool,
    pub positions: [i64; NUM_AXES],
    pub setpoints: [i64; NUM_AXES],
    pub commands: [f64; NUM_AXES],
    pub velocities: [f64; NUM_AXES],
    pub loop_stats: LoopStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum Reply {
    Ok,
    Error { message: String },
    Rejected { axes: Vec<AxisRejection> },
    Status(StatusReport),
}

/// Parses one request line; the error string is ready for an error reply.
pub fn decode_request(line: &str) -> Result<Request, String> {
    serde_json::from_str(line.trim()).map_err(|e| format!("malformed request: {e}"))
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("protocol types always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_forms() {
        assert_eq!(encode(&Request::Enable), "{\"cmd\":\"enable\"}\n");
        assert_eq!(encode(&Reply::Ok), "{\"reply\":\"ok\"}\n");
        assert_eq!(
            encode(&Request::SetSetpoints { setpoints: [1, 2, 3, 4, 5, 6, 7, 8] }),
            "{\"cmd\":\"set_setpoints\",\"setpoints\":[1,2,3,4,5,6,7,8]}\n"
        );
        assert_eq!(decode_request("{\"cmd\":\"step\",\"ticks\":5}\n"), Ok(Request::Step { ticks: 5 }));
    }

    #[test]
    fn malformed_requests() {
        for bad in [
            "",
            "{}",
            "not json",
            "{\"cmd\":\"launch\"}",
            "{\"cmd\":\"set_setpoints\",\"setpoints\":[1,2,3]}",
            "{\"cmd\":\"set_setpoints\",\"setpoints\":[1,2,3,4,5,6,7,8.5]}",
        ] {
            assert!(decode_request(bad).is_err(), "{bad}");
        }
    }
}
