//! Vehicle positions along a straight highway.
//!
//! Positions are one-dimensional. The platoon leader is vehicle 1 and the
//! followers trail it in index order. Positions come either from the analytic
//! platoon model or from an ns-2 movement trace.

use thiserror::Error;

use crate::config::{MobilitySource, ScenarioConfig};
use crate::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("vehicle {0} does not exist")]
    UnknownVehicle(VehicleId),
    #[error("time {t_ms} ms is outside [0, {horizon_ms}] ms")]
    TimeOutOfRange { t_ms: u64, horizon_ms: u64 },
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace line {line}: node {node} exceeds the {n_vehicles} simulated vehicles")]
    NodeOutOfRange {
        line: usize,
        node: usize,
        n_vehicles: usize,
    },
    #[error("trace has no entry for node {}", .0.get() - 1)]
    MissingVehicle(VehicleId),
    #[error("cannot read trace {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub time_ms: f64,
    pub x_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// `x(t) = x0 + speed * t`.
    Analytic { x0_m: f64, speed_mps: f64 },
    /// Piecewise-linear through the waypoints, constant outside them.
    /// Waypoint times are non-decreasing.
    Waypoints(Vec<Waypoint>),
}

impl Trajectory {
    pub fn position(&self, t_ms: f64) -> f64 {
        match self {
            Trajectory::Analytic { x0_m, speed_mps } => x0_m + speed_mps * t_ms / 1000.0,
            Trajectory::Waypoints(points) => interpolate(points, t_ms),
        }
    }
}

fn interpolate(points: &[Waypoint], t_ms: f64) -> f64 {
    let first = points[0];
    if t_ms <= first.time_ms {
        return first.x_m;
    }
    // index of the first waypoint strictly after t
    let after = points.partition_point(|p| p.time_ms <= t_ms);
    if after == points.len() {
        return points[after - 1].x_m;
    }
    let (a, b) = (points[after - 1], points[after]);
    let frac = (t_ms - a.time_ms) / (b.time_ms - a.time_ms);
    a.x_m + frac * (b.x_m - a.x_m)
}

/// Positions of all vehicles of one scenario.
#[derive(Debug, Clone)]
pub struct Mobility {
    trajectories: Vec<Trajectory>,
    horizon_ms: u64,
}

impl Mobility {
    /// Rigid platoon: vehicle `i` sits `(i - 1) * (gap + length)` behind the
    /// leader and everyone drives at `speed_mps`.
    pub fn platoon(
        n_vehicles: usize,
        gap_m: f64,
        length_m: f64,
        speed_mps: f64,
        horizon_ms: u64,
    ) -> Self {
        let spacing = gap_m + length_m;
        let trajectories = (0..n_vehicles)
            .map(|i| Trajectory::Analytic {
                x0_m: -(i as f64) * spacing,
                speed_mps,
            })
            .collect();
        Self {
            trajectories,
            horizon_ms,
        }
    }

    pub fn from_trajectories(trajectories: Vec<Trajectory>, horizon_ms: u64) -> Self {
        Self {
            trajectories,
            horizon_ms,
        }
    }

    /// Builds the mobility model a scenario asks for. The horizon covers the
    /// traffic window plus the drain period.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, MobilityError> {
        let horizon = cfg.sim_time_ms + cfg.drain_ms();
        let n = cfg.n_vehicles as usize;
        match cfg.mobility_source {
            MobilitySource::PlatoonModel => Ok(Self::platoon(
                n,
                cfg.inter_vehicle_gap_m,
                cfg.vehicle_length_m,
                cfg.speed_mps,
                horizon,
            )),
            MobilitySource::Ns2Trace => {
                let path = cfg.trace_path.as_ref().ok_or(MobilityError::Io {
                    path: String::new(),
                    msg: "no trace_path configured".into(),
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| MobilityError::Io {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                Ok(Self::from_trajectories(load_ns2_trace(&text, n)?, horizon))
            }
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon_ms(&self) -> u64 {
        self.horizon_ms
    }

    pub fn trajectory(&self, id: VehicleId) -> Result<&Trajectory, MobilityError> {
        self.trajectories
            .get(id.index())
            .ok_or(MobilityError::UnknownVehicle(id))
    }

    pub fn position(&self, id: VehicleId, t_ms: u64) -> Result<f64, MobilityError> {
        if t_ms > self.horizon_ms {
            return Err(MobilityError::TimeOutOfRange {
                t_ms,
                horizon_ms: self.horizon_ms,
            });
        }
        Ok(self.trajectory(id)?.position(t_ms as f64))
    }

    pub fn pair_distance(&self, a: VehicleId, b: VehicleId, t_ms: u64) -> Result<f64, MobilityError> {
        Ok((self.position(a, t_ms)? - self.position(b, t_ms)?).abs())
    }

    /// Distance vehicle `id` travelled between `from_ms` and `to_ms`.
    pub fn displacement(&self, id: VehicleId, from_ms: u64, to_ms: u64) -> Result<f64, MobilityError> {
        Ok((self.position(id, to_ms)? - self.position(id, from_ms)?).abs())
    }
}

struct NodeTrace {
    initial_x: Option<f64>,
    // (start time s, destination x, speed m/s) in file order
    moves: Vec<(f64, f64, f64)>,
}

fn parse_f64(token: Option<&str>, line: usize, what: &str) -> Result<f64, MobilityError> {
    let token = token.ok_or_else(|| MobilityError::Malformed {
        line,
        msg: format!("missing {what}"),
    })?;
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| MobilityError::Malformed {
            line,
            msg: format!("bad {what} `{token}`"),
        })
}

fn parse_node(token: Option<&str>, line: usize) -> Result<usize, MobilityError> {
    let token = token.unwrap_or("");
    token
        .strip_prefix("$node_(")
        .and_then(|rest| rest.strip_suffix(')'))
        .and_then(|idx| idx.parse::<usize>().ok())
        .ok_or_else(|| MobilityError::Malformed {
            line,
            msg: format!("expected `$node_(k)`, found `{token}`"),
        })
}

/// Parses the `set X_` / `setdest` subset of the ns-2 movement format.
///
/// Node `k` becomes vehicle `k + 1`. Only the X coordinate is used; Y and Z
/// are accepted and ignored.
pub fn load_ns2_trace(text: &str, n_vehicles: usize) -> Result<Vec<Trajectory>, MobilityError> {
    let mut nodes: Vec<Option<NodeTrace>> = (0..n_vehicles).map(|_| None).collect();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").replace('"', " ");
        let mut tokens = content.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };

        let (node, entry) = if first == "$ns_" {
            if tokens.next() != Some("at") {
                return Err(MobilityError::Malformed {
                    line,
                    msg: "expected `$ns_ at <time>`".into(),
                });
            }
            let t = parse_f64(tokens.next(), line, "time")?;
            let node = parse_node(tokens.next(), line)?;
            if tokens.next() != Some("setdest") {
                return Err(MobilityError::Malformed {
                    line,
                    msg: "only `setdest` commands are supported".into(),
                });
            }
            let x = parse_f64(tokens.next(), line, "destination x")?;
            let _y = parse_f64(tokens.next(), line, "destination y")?;
            let speed = parse_f64(tokens.next(), line, "speed")?;
            if t < 0.0 || speed < 0.0 {
                return Err(MobilityError::Malformed {
                    line,
                    msg: "time and speed must be non-negative".into(),
                });
            }
            (node, Err((t, x, speed)))
        } else {
            let node = parse_node(Some(first), line)?;
            if tokens.next() != Some("set") {
                return Err(MobilityError::Malformed {
                    line,
                    msg: "expected `set X_|Y_|Z_ <value>`".into(),
                });
            }
            let axis = tokens.next();
            let value = parse_f64(tokens.next(), line, "coordinate")?;
            match axis {
                Some("X_") => (node, Ok(Some(value))),
                Some("Y_") | Some("Z_") => (node, Ok(None)),
                other => {
                    return Err(MobilityError::Malformed {
                        line,
                        msg: format!("unknown coordinate `{}`", other.unwrap_or("")),
                    })
                }
            }
        };
        if tokens.next().is_some() {
            return Err(MobilityError::Malformed {
                line,
                msg: "trailing tokens".into(),
            });
        }
        if node >= n_vehicles {
            return Err(MobilityError::NodeOutOfRange {
                line,
                node,
                n_vehicles,
            });
        }

        let trace = nodes[node].get_or_insert_with(|| NodeTrace {
            initial_x: None,
            moves: Vec::new(),
        });
        match entry {
            Ok(Some(x)) => trace.initial_x = Some(x),
            Ok(None) => {}
            Err(mv) => trace.moves.push(mv),
        }
    }

    nodes
        .into_iter()
        .enumerate()
        .map(|(i, node)| {
            let node = node.ok_or(MobilityError::MissingVehicle(VehicleId::from_index(i)))?;
            Ok(Trajectory::Waypoints(build_waypoints(node)))
        })
        .collect()
}

fn build_waypoints(mut node: NodeTrace) -> Vec<Waypoint> {
    let x0 = node.initial_x.unwrap_or(0.0);
    node.moves.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<Waypoint> = Vec::new();

    for (t_s, dest, speed) in node.moves {
        let start_ms = t_s * 1000.0;
        let here = if points.is_empty() {
            x0
        } else {
            interpolate(&points, start_ms)
        };
        // a new setdest interrupts any movement still in progress
        while points.last().is_some_and(|p| p.time_ms >= start_ms) {
            points.pop();
        }
        points.push(Waypoint {
            time_ms: start_ms,
            x_m: here,
        });
        let distance = (dest - here).abs();
        if speed > 0.0 && distance > 0.0 {
            points.push(Waypoint {
                time_ms: start_ms + distance / speed * 1000.0,
                x_m: dest,
            });
        }
    }

    if points.is_empty() {
        points.push(Waypoint {
            time_ms: 0.0,
            x_m: x0,
        });
    }
    points
}
