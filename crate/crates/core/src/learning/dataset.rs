//! Transition samples `(q_k, q̇_k | p_k, u_k, Δt) → (q_{k+1}, q̇_{k+1} | p_{k+1})`
//! and their CSV form.
//!
//! Header layout (`N` coordinates, `M` inputs; `qd` columns become `p` for
//! momentum datasets):
//!
//! ```text
//! trajectory_id,q0..q{N-1},qd0..qd{N-1},u0..u{M-1},dt,next_q0..,next_qd0..
//! ```

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::physnets::ModelKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub trajectory: u64,
    pub q: Vec<f64>,
    /// Velocity for Lagrangian datasets, momentum for Hamiltonian ones.
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub dt: f64,
    pub next_q: Vec<f64>,
    pub next_v: Vec<f64>,
}

impl TransitionSample {
    pub fn state(&self) -> Vec<f64> {
        let mut x = self.q.clone();
        x.extend(&self.v);
        x
    }

    pub fn next_state(&self) -> Vec<f64> {
        let mut x = self.next_q.clone();
        x.extend(&self.next_v);
        x
    }
}

/// Consecutive states of one trajectory with the inputs held between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub dt: f64,
    /// `[q; v]` per sample time.
    pub states: Vec<Vec<f64>>,
    /// `inputs[k]` is held over `[t_k, t_{k+1})`.
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    pub kind: ModelKind,
    pub dof: usize,
    pub inputs: usize,
    pub plant: Option<String>,
    pub samples: Vec<TransitionSample>,
}

impl TransitionDataset {
    pub fn new(kind: ModelKind, dof: usize, inputs: usize) -> Self {
        Self {
            kind,
            dof,
            inputs,
            plant: None,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: TransitionSample) -> Result<()> {
        check_len("sample configuration", self.dof, sample.q.len())?;
        check_len("sample velocity/momentum", self.dof, sample.v.len())?;
        check_len("sample input", self.inputs, sample.u.len())?;
        check_len("sample next configuration", self.dof, sample.next_q.len())?;
        check_len("sample next velocity/momentum", self.dof, sample.next_v.len())?;
        if !(sample.dt > 0.0 && sample.dt.is_finite()) {
            return Err(Error::Invalid(format!("sample time step must be positive, got {}", sample.dt)));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        self.samples.first().map(|s| 1.0 / s.dt)
    }

    /// Distinct trajectory ids, ascending.
    pub fn trajectory_ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.trajectory).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn subset(&self, ids: &[u64]) -> Self {
        let keep: BTreeSet<u64> = ids.iter().copied().collect();
        Self {
            samples: self.samples.iter().filter(|s| keep.contains(&s.trajectory)).cloned().collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Self {
        Self {
            kind: self.kind,
            dof: self.dof,
            inputs: self.inputs,
            plant: self.plant.clone(),
            samples: Vec::new(),
        }
    }

    /// Trajectory-level split into `(train, validation)`. At least one
    /// trajectory stays in the training part.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::config("validation_fraction", "must be in [0, 1)"));
        }
        let mut ids = self.trajectory_ids();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((ids.len() as f64 * validation_fraction).round() as usize).min(ids.len().saturating_sub(1));
        let (val, train) = ids.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Reassembles trajectories from consecutive samples; a new trajectory
    /// starts whenever the id changes or the chain of states breaks.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let mut out: Vec<Trajectory> = Vec::new();
        for s in &self.samples {
            let continues = out.last().is_some_and(|t| {
                t.id == s.trajectory && t.dt == s.dt && t.states.last() == Some(&s.state())
            });
            if continues {
                let t = out.last_mut().expect("checked above");
                t.inputs.push(s.u.clone());
                t.states.push(s.next_state());
            } else {
                out.push(Trajectory {
                    id: s.trajectory,
                    dt: s.dt,
                    states: vec![s.state(), s.next_state()],
                    inputs: vec![s.u.clone()],
                });
            }
        }
        out
    }

    pub fn header(&self) -> Vec<String> {
        let (n, m) = (self.dof, self.inputs);
        let v = match self.kind {
            ModelKind::Lnn => "qd",
            ModelKind::Hnn => "p",
        };
        let mut h = vec!["trajectory_id".to_string()];
        h.extend((0..n).map(|i| format!("q{i}")));
        h.extend((0..n).map(|i| format!("{v}{i}")));
        h.extend((0..m).map(|i| format!("u{i}")));
        h.push("dt".into());
        h.extend((0..n).map(|i| format!("next_q{i}")));
        h.extend((0..n).map(|i| format!("next_{v}{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header()).map_err(csv_err)?;
        for s in &self.samples {
            let mut rec = vec![s.trajectory.to_string()];
            rec.extend(
                s.q.iter()
                    .chain(&s.v)
                    .chain(&s.u)
                    .chain(std::iter::once(&s.dt))
                    .chain(&s.next_q)
                    .chain(&s.next_v)
                    .map(|x| format_float(*x)),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let (kind, dof, inputs) = infer_layout(&header)?;
        let mut ds = Self::new(kind, dof, inputs);
        if ds.header() != header {
            return Err(Error::Parse(format!("unexpected dataset header: {}", header.join(","))));
        }
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = row + 2;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("line {line}: expected {} fields, got {}", header.len(), rec.len())));
            }
            let trajectory: u64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: invalid trajectory_id `{}`", &rec[0])))?;
            let vals = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(c, f)| {
                    f.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse(format!("line {line}: invalid number in column `{}`", header[c + 1])))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (n, m) = (dof, inputs);
            let mut at = 0;
            let mut take = |len: usize| {
                let s = vals[at..at + len].to_vec();
                at += len;
                s
            };
            let q = take(n);
            let v = take(n);
            let u = take(m);
            let dt = take(1)[0];
            let sample = TransitionSample {
                trajectory,
                q,
                v,
                u,
                dt,
                next_q: take(n),
                next_v: take(n),
            };
            ds.push(sample).map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn infer_layout(header: &[String]) -> Result<(ModelKind, usize, usize)> {
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())))
            .count()
    };
    let (nq, nqd, np, nu) = (count("q"), count("qd"), count("p"), count("u"));
    let kind = match (nqd, np) {
        (k, 0) if k > 0 => ModelKind::Lnn,
        (0, k) if k > 0 => ModelKind::Hnn,
        _ => return Err(Error::Parse("dataset header must contain either qd* or p* columns".into())),
    };
    if nq == 0 || nu == 0 {
        return Err(Error::Parse("dataset header must contain q* and u* columns".into()));
    }
    Ok((kind, nq, nu))
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
