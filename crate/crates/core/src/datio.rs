//! Replay-buffer files and the line-oriented environment server.
//!
//! A buffer file is a `# pps-buffer v1` line, `key=value` header lines, a
//! blank line, then one CSV row per transition:
//! `s0..s{d-1},a0..a{m-1},r,sp0..sp{d-1},done`. Rewards are stored raw; the
//! header carries their mean and population standard deviation so readers can
//! normalize.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::net::{Ipv4Addr, TcpListener};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{ActionVec, ReplayBuffer, StateVec, Transition};

pub const MAGIC: &str = "# pps-buffer v1";
pub const FORMAT_VERSION: u32 = 1;

/// Header of a buffer file.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferHeader {
    pub version: u32,
    pub env: String,
    pub d: usize,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// Set when `reward_std` is zero and normalization must not divide by it.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

impl RewardStats {
    /// Mean and population standard deviation. Empty input gives zeros.
    pub fn from_rewards(rewards: &[f64]) -> Self {
        if rewards.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
                degenerate: true,
            };
        }
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std,
            degenerate: std.is_nan() || std <= 0.0,
        }
    }

    /// `(r - mean) / std`, or 0 when the spread is degenerate.
    pub fn normalize(&self, r: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (r - self.mean) / self.std
        }
    }
}

impl BufferHeader {
    pub fn stats(&self) -> RewardStats {
        RewardStats {
            mean: self.reward_mean,
            std: self.reward_std,
            degenerate: self.degenerate,
        }
    }

    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "version={}", self.version);
        let _ = writeln!(out, "env={}", self.env);
        let _ = writeln!(out, "d={}", self.d);
        let _ = writeln!(out, "m={}", self.m);
        let _ = writeln!(out, "count={}", self.count);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "reward_mean={}", self.reward_mean);
        let _ = writeln!(out, "reward_std={}", self.reward_std);
        let _ = writeln!(out, "reward_degenerate={}", u8::from(self.degenerate));
        out.push('\n');
        out
    }
}

/// Writes a nonempty buffer; dimensions are taken from its transitions.
pub fn write_buffer<T: Real>(buffer: &ReplayBuffer<T>, path: &Path) -> Result<BufferHeader> {
    let (Some(d), Some(m)) = (buffer.state_dim(), buffer.action_dim()) else {
        return Err(Error::Format("refusing to write an empty buffer without dimensions".into()));
    };
    write_buffer_with_dims(buffer, d, m, path)
}

/// Writes a buffer of known dimensions. Empty buffers give a header-only file.
pub fn write_buffer_with_dims<T: Real>(
    buffer: &ReplayBuffer<T>,
    d: usize,
    m: usize,
    path: &Path,
) -> Result<BufferHeader> {
    for t in buffer.transitions() {
        for (what, expected, got) in [
            ("buffer state", d, t.s.len()),
            ("buffer action", m, t.a.len()),
            ("buffer next state", d, t.s_next.len()),
        ] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
    }
    let rewards: Vec<f64> = buffer.transitions().iter().map(|t| t.r.to_f64_lossy()).collect();
    let stats = RewardStats::from_rewards(&rewards);
    let header = BufferHeader {
        version: FORMAT_VERSION,
        env: buffer.env_id.clone(),
        d,
        m,
        count: buffer.len(),
        seed: buffer.seed,
        reward_mean: stats.mean,
        reward_std: stats.std,
        degenerate: stats.degenerate,
    };

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    let write_err = |e| Error::io(path, e);
    out.write_all(header.render().as_bytes()).map_err(write_err)?;
    for t in buffer.transitions() {
        line.clear();
        let fields = t
            .s
            .iter()
            .chain(t.a.iter())
            .chain(std::iter::once(&t.r))
            .chain(t.s_next.iter());
        for v in fields {
            let _ = write!(line, "{v},");
        }
        line.push(if t.done { '1' } else { '0' });
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    Ok(header)
}

fn parse_header(lines: &mut impl Iterator<Item = (usize, String)>) -> Result<BufferHeader> {
    let magic = lines
        .next()
        .ok_or_else(|| Error::Format("empty file".into()))?
        .1;
    if magic.trim_end() != MAGIC {
        return match magic.strip_prefix("# pps-buffer ") {
            Some(v) => Err(Error::Version(v.trim().to_owned())),
            None => Err(Error::Format("missing `# pps-buffer` magic line".into())),
        };
    }
    let mut fields = std::collections::BTreeMap::new();
    for (_, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        fields.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("header lacks `{k}`")))
    };
    fn num<V: std::str::FromStr>(k: &str, v: String) -> Result<V> {
        v.parse()
            .map_err(|_| Error::Format(format!("header `{k}` is not a number: `{v}`")))
    }
    let version: u32 = num("version", get("version")?)?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(version.to_string()));
    }
    let degenerate = match get("reward_degenerate")?.as_str() {
        "0" => false,
        "1" => true,
        other => return Err(Error::Format(format!("bad reward_degenerate `{other}`"))),
    };
    Ok(BufferHeader {
        version,
        env: get("env")?,
        d: num("d", get("d")?)?,
        m: num("m", get("m")?)?,
        count: num("count", get("count")?)?,
        seed: num("seed", get("seed")?)?,
        reward_mean: num("reward_mean", get("reward_mean")?)?,
        reward_std: num("reward_std", get("reward_std")?)?,
        degenerate,
    })
}

fn parse_row<T: Real>(line: &str, d: usize, m: usize) -> std::result::Result<Transition<T>, String> {
    let fields: Vec<&str> = line.split(',').collect();
    let width = 2 * d + m + 2;
    if fields.len() != width {
        return Err(format!("expected {width} fields, found {}", fields.len()));
    }
    let mut vals = Vec::with_capacity(width - 1);
    for (i, f) in fields[..width - 1].iter().enumerate() {
        let v: T = f
            .trim()
            .parse()
            .map_err(|_| format!("field {} is not a number: `{f}`", i + 1))?;
        vals.push(v);
    }
    let done = match fields[width - 1].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("done flag must be 0 or 1, found `{other}`")),
    };
    Ok(Transition {
        s: StateVec::from_slice(&vals[..d]),
        a: ActionVec::from_slice(&vals[d..d + m]),
        r: vals[d + m],
        s_next: StateVec::from_slice(&vals[d + m + 1..]),
        done,
    })
}

/// Reads a buffer file. Row numbers in errors count data rows from 1.
pub fn read_buffer<T: Real>(path: &Path) -> Result<(ReplayBuffer<T>, BufferHeader)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_buffer(&text)
}

pub fn parse_buffer<T: Real>(text: &str) -> Result<(ReplayBuffer<T>, BufferHeader)> {
    let mut lines = text.lines().map(str::to_owned).enumerate();
    let header = parse_header(&mut lines)?;
    let mut buffer = ReplayBuffer::new(header.env.clone(), header.seed);
    let mut row = 0;
    for (_, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        if row > header.count {
            return Err(Error::MalformedRow {
                row,
                last_good: row - 1,
                reason: format!("more rows than count={}", header.count),
            });
        }
        let t = parse_row(&line, header.d, header.m).map_err(|reason| Error::MalformedRow {
            row,
            last_good: row - 1,
            reason,
        })?;
        buffer.push(t)?;
    }
    if row < header.count {
        return Err(Error::MalformedRow {
            row: row + 1,
            last_good: row,
            reason: format!("file ends early, count={}", header.count),
        });
    }
    Ok((buffer, header))
}

/// One request line of the environment server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Spec,
    Close,
}

/// One response line of the environment server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    State {
        s: Vec<f64>,
    },
    StepResult {
        s_next: Vec<f64>,
        r: f64,
        done: bool,
    },
    Spec {
        d: usize,
        m: usize,
        state_lower: Vec<f64>,
        state_upper: Vec<f64>,
        action_lower: Vec<f64>,
        action_upper: Vec<f64>,
        dt: f64,
    },
    Ack,
    Error {
        message: String,
    },
}

/// Server-side session: the environment plus the current state.
pub struct Session<'a, T: Real> {
    env: &'a dyn Environment<T>,
    state: Option<StateVec<T>>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(env: &'a dyn Environment<T>) -> Self {
        Self { env, state: None }
    }

    /// Answers one request line; `None` when the line asks to close.
    pub fn handle_line(&mut self, line: &str) -> Option<Response> {
        match serde_json::from_str::<Request>(line) {
            Ok(Request::Close) => None,
            Ok(req) => Some(self.handle(req)),
            Err(e) => Some(Response::Error {
                message: format!("bad request: {e}"),
            }),
        }
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Reset { seed } => {
                let s = self.env.reset(seed);
                let out = s.to_f64_vec();
                self.state = Some(s);
                Response::State { s: out }
            }
            Request::Step { action } => {
                let Some(s) = &self.state else {
                    return Response::Error {
                        message: "no current state: send reset first".into(),
                    };
                };
                let m = self.env.spec().action_dim;
                if action.len() != m {
                    return Response::Error {
                        message: format!("action has {} entries, expected {m}", action.len()),
                    };
                }
                if action.iter().any(|a| !a.is_finite()) {
                    return Response::Error {
                        message: "action is not finite".into(),
                    };
                }
                let out = self.env.step(s, &ActionVec::from_f64_slice(&action));
                let resp = Response::StepResult {
                    s_next: out.s_next.to_f64_vec(),
                    r: out.r.to_f64_lossy(),
                    done: out.done,
                };
                self.state = Some(out.s_next);
                resp
            }
            Request::Spec => {
                let spec = self.env.spec();
                Response::Spec {
                    d: spec.state_dim,
                    m: spec.action_dim,
                    state_lower: spec.state_lower.to_f64_vec(),
                    state_upper: spec.state_upper.to_f64_vec(),
                    action_lower: spec.action_lower.to_f64_vec(),
                    action_upper: spec.action_upper.to_f64_vec(),
                    dt: spec.dt.to_f64_lossy(),
                }
            }
            Request::Close => Response::Ack,
        }
    }
}

fn send(writer: &mut impl Write, resp: &Response) -> Result<()> {
    let line = serde_json::to_string(resp).map_err(|e| Error::Format(e.to_string()))?;
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Serves newline-delimited JSON requests until `close` or end of input.
pub fn serve_env<T: Real>(
    env: &dyn Environment<T>,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    let mut session = Session::new(env);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match session.handle_line(&line) {
            Some(resp) => send(&mut writer, &resp)?,
            None => {
                send(&mut writer, &Response::Ack)?;
                break;
            }
        }
    }
    Ok(())
}

/// Binds a loopback listener; port 0 picks a free port.
pub fn bind_local(port: u16) -> Result<TcpListener> {
    Ok(TcpListener::bind((Ipv4Addr::LOCALHOST, port))?)
}

/// Accepts connections, each with its own session on its own thread. Stops
/// after `max_connections` when given.
pub fn serve_tcp<T: Real>(
    env: &dyn Environment<T>,
    listener: &TcpListener,
    max_connections: Option<usize>,
) -> Result<()> {
    std::thread::scope(|scope| {
        let mut accepted = 0;
        while max_connections.is_none_or(|n| accepted < n) {
            let (stream, _) = listener.accept()?;
            accepted += 1;
            scope.spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => io::BufReader::new(s),
                    Err(_) => return,
                };
                // a dropped client only ends its own session
                let _ = serve_env(env, reader, stream);
            });
        }
        Ok(())
    })
}
