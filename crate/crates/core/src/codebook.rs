//! Walsh matrices and fixed-angle non-orthogonal codebooks.
//!
//! A codebook is built by picking `K` Walsh rows and flipping elements of
//! each pair's first codeword until every pairwise inner product sits within
//! a tolerance of `L·cos θ` (rounded to the parity `L` can realize).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

/// Bits flipped in one codeword when a sweep makes no progress.
const KICK_FLIPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalshMatrix {
    order: usize,
    entries: Vec<i8>,
}

impl WalshMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.order..(i + 1) * self.order]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.entries.chunks(self.order)
    }
}

/// Sylvester/Hadamard recursion `W_2n = [[W, W], [W, -W]]` from `W_1 = [1]`.
pub fn walsh_matrix(order: usize) -> Result<WalshMatrix> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(order));
    }
    let mut n = 1;
    let mut entries = vec![1i8];
    while n < order {
        let m = 2 * n;
        let mut next = vec![0i8; m * m];
        for r in 0..n {
            for c in 0..n {
                let v = entries[r * n + c];
                next[r * m + c] = v;
                next[r * m + c + n] = v;
                next[(r + n) * m + c] = v;
                next[(r + n) * m + c + n] = -v;
            }
        }
        entries = next;
        n = m;
    }
    Ok(WalshMatrix { order, entries })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codeword {
    pub elements: Vec<i8>,
    /// 1-based user index.
    pub user_index: usize,
}

impl Codeword {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dot(&self, other: &Codeword) -> i64 {
        dot(&self.elements, &other.elements)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.elements.iter().map(|&v| v as f64).collect()
    }
}

fn dot(a: &[i8], b: &[i8]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| (x as i64) * (y as i64)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub length: usize,
    pub theta_deg: f64,
    pub codewords: Vec<Codeword>,
}

impl Codebook {
    pub fn num_users(&self) -> usize {
        self.codewords.len()
    }

    /// Codeword of user `i` (0-based).
    pub fn codeword(&self, i: usize) -> &Codeword {
        &self.codewords[i]
    }

    pub fn dot_matrix(&self) -> Vec<Vec<i64>> {
        self.codewords
            .iter()
            .map(|a| self.codewords.iter().map(|b| a.dot(b)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NocGenConfig {
    pub length: usize,
    pub num_users: usize,
    pub theta_deg: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    /// Walsh rows to start from; defaults to rows `1..=K` (skipping the all-ones row).
    #[serde(default)]
    pub rows: Option<Vec<usize>>,
}

fn default_iters() -> usize {
    100
}

fn default_tolerance() -> f64 {
    2.0
}

impl NocGenConfig {
    pub fn new(length: usize, num_users: usize, theta_deg: f64) -> Self {
        NocGenConfig {
            length,
            num_users,
            theta_deg,
            iters: default_iters(),
            tolerance: default_tolerance(),
            seed: 0,
            rows: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || !self.length.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(self.length));
        }
        if self.num_users < 2 || self.num_users > self.length {
            return Err(Error::InvalidConfig(format!(
                "num_users must satisfy 2 <= K <= L (K = {}, L = {})",
                self.num_users, self.length
            )));
        }
        if !(self.theta_deg > 0.0 && self.theta_deg <= 90.0) {
            return Err(Error::InvalidConfig(format!(
                "theta_deg must lie in (0, 90], got {}",
                self.theta_deg
            )));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig("tolerance must be finite and >= 0".into()));
        }
        if let Some(rows) = &self.rows {
            if rows.len() != self.num_users {
                return Err(Error::InvalidConfig(format!(
                    "{} rows given for {} users",
                    rows.len(),
                    self.num_users
                )));
            }
            let mut seen = rows.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != rows.len() || rows.iter().any(|&r| r >= self.length) {
                return Err(Error::InvalidConfig(
                    "rows must be distinct indices below L".into(),
                ));
            }
        }
        Ok(())
    }

    fn selected_rows(&self) -> Vec<usize> {
        match &self.rows {
            Some(rows) => rows.clone(),
            None if self.num_users < self.length => (1..=self.num_users).collect(),
            None => (0..self.num_users).collect(),
        }
    }

    /// `L·cos θ` rounded to the nearest integer sharing the parity of `L`.
    pub fn target_dot(&self) -> i64 {
        round_to_parity(
            self.length as f64 * self.theta_deg.to_radians().cos(),
            self.length,
        )
    }
}

/// Nearest integer to `x` with the same parity as `length`; ties go toward zero.
pub fn round_to_parity(x: f64, length: usize) -> i64 {
    let parity = (length % 2) as i64;
    let base = x.floor() as i64;
    (base - 2..=base + 3)
        .filter(|v| v.rem_euclid(2) == parity)
        .min_by(|a, b| {
            let da = (*a as f64 - x).abs();
            let db = (*b as f64 - x).abs();
            da.partial_cmp(&db).unwrap().then(a.abs().cmp(&b.abs()))
        })
        .expect("candidate window always holds both parities")
}

/// Bookkeeping from one hill-climbing run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClimbTrace {
    /// Objective `Σ_{i≠j} (d_ij − d_target)²` after each accepted flip.
    pub objective: Vec<i64>,
    /// Indices into `objective` at which a random kick was applied first.
    pub kicks: Vec<usize>,
    pub sweeps: usize,
}

struct Climber {
    codes: Vec<Vec<i8>>,
    gram: Vec<Vec<i64>>,
    target: i64,
}

impl Climber {
    fn new(codes: Vec<Vec<i8>>, target: i64) -> Self {
        let gram = codes
            .iter()
            .map(|a| codes.iter().map(|b| dot(a, b)).collect())
            .collect();
        Climber {
            codes,
            gram,
            target,
        }
    }

    fn k(&self) -> usize {
        self.codes.len()
    }

    fn objective(&self) -> i64 {
        let mut total = 0;
        for i in 0..self.k() {
            for j in 0..self.k() {
                if i != j {
                    let e = self.gram[i][j] - self.target;
                    total += e * e;
                }
            }
        }
        total
    }

    fn max_deviation(&self) -> i64 {
        let mut worst = 0;
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                worst = worst.max((self.gram[i][j] - self.target).abs());
            }
        }
        worst
    }

    /// Objective change if `codes[i][pos]` were flipped.
    fn flip_delta(&self, i: usize, pos: usize) -> i64 {
        let ci = self.codes[i][pos] as i64;
        let mut delta = 0;
        for l in 0..self.k() {
            if l == i {
                continue;
            }
            let e = self.gram[i][l] - self.target;
            let step = -2 * ci * self.codes[l][pos] as i64;
            // ordered pairs (i,l) and (l,i)
            delta += 2 * ((e + step) * (e + step) - e * e);
        }
        delta
    }

    /// Objective change if `codes[i][p]` and `codes[i][q]` were both flipped.
    fn double_flip_delta(&self, i: usize, p: usize, q: usize) -> i64 {
        let (cp, cq) = (self.codes[i][p] as i64, self.codes[i][q] as i64);
        let mut delta = 0;
        for l in 0..self.k() {
            if l == i {
                continue;
            }
            let e = self.gram[i][l] - self.target;
            let step = -2 * cp * self.codes[l][p] as i64 - 2 * cq * self.codes[l][q] as i64;
            delta += 2 * ((e + step) * (e + step) - e * e);
        }
        delta
    }

    fn flip(&mut self, i: usize, pos: usize) {
        let ci = self.codes[i][pos] as i64;
        for l in 0..self.k() {
            if l != i {
                let step = -2 * ci * self.codes[l][pos] as i64;
                self.gram[i][l] += step;
                self.gram[l][i] += step;
            }
        }
        self.codes[i][pos] = -self.codes[i][pos];
    }
}

/// Builds a fixed-angle codebook; see [`generate_noc_traced`].
pub fn generate_noc(cfg: &NocGenConfig) -> Result<Codebook> {
    generate_noc_traced(cfg).map(|(book, _)| book)
}

/// Pairwise hill climb over codeword elements.
///
/// Each sweep visits every element of every codeword in index order and
/// keeps a flip only when it strictly lowers the global objective. If no
/// single flip helps, the first two-element flip within one codeword that
/// lowers the objective is taken; failing that, a seeded kick flips a few
/// random bits in one codeword. Climbing
/// continues toward the exact target until the sweep budget runs out. Of the
/// states seen at sweep ends, the one with the smallest worst-pair deviation
/// is returned (ties: lower objective, then smaller angle error), provided it
/// is within tolerance.
pub fn generate_noc_traced(cfg: &NocGenConfig) -> Result<(Codebook, ClimbTrace)> {
    cfg.validate()?;
    let walsh = walsh_matrix(cfg.length)?;
    let codes: Vec<Vec<i8>> = cfg
        .selected_rows()
        .into_iter()
        .map(|r| walsh.row(r).to_vec())
        .collect();
    let target = cfg.target_dot();
    let mut state = Climber::new(codes, target);
    let mut rng = seeded_rng(cfg.seed, 0x4e4f43);
    let mut trace = ClimbTrace::default();
    let mut objective = state.objective();
    let rank = |c: &Climber, objective: i64| {
        let angle = c.worst_angle_error(cfg.theta_deg, cfg.length);
        (c.max_deviation(), objective, angle)
    };
    let mut best_rank = rank(&state, objective);
    let mut best = state.codes.clone();

    while objective > 0 && trace.sweeps < cfg.iters {
        trace.sweeps += 1;
        let mut accepted = 0usize;
        for i in 0..state.k() {
            for pos in 0..cfg.length {
                let delta = state.flip_delta(i, pos);
                if delta < 0 {
                    state.flip(i, pos);
                    objective += delta;
                    trace.objective.push(objective);
                    accepted += 1;
                }
            }
        }
        if accepted == 0 && objective > 0 {
            'pairs: for i in 0..state.k() {
                for p in 0..cfg.length {
                    for q in p + 1..cfg.length {
                        let delta = state.double_flip_delta(i, p, q);
                        if delta < 0 {
                            state.flip(i, p);
                            state.flip(i, q);
                            objective += delta;
                            trace.objective.push(objective);
                            accepted += 1;
                            break 'pairs;
                        }
                    }
                }
            }
        }
        let r = rank(&state, objective);
        if r < best_rank {
            best_rank = r;
            best = state.codes.clone();
        }
        if objective > 0 && accepted == 0 {
            let who = rng.random_range(0..state.k());
            for pos in sample(&mut rng, cfg.length, KICK_FLIPS.min(cfg.length)) {
                state.flip(who, pos);
            }
            objective = state.objective();
            trace.kicks.push(trace.objective.len());
        }
    }

    let state = Climber::new(best, target);
    if !state.gram_within(cfg.tolerance) {
        return Err(Error::TargetUnreachable {
            target,
            sweeps: trace.sweeps,
            best_deviation: state.max_deviation(),
        });
    }

    let codewords = state
        .codes
        .into_iter()
        .enumerate()
        .map(|(i, elements)| Codeword {
            elements,
            user_index: i + 1,
        })
        .collect();
    Ok((
        Codebook {
            length: cfg.length,
            theta_deg: cfg.theta_deg,
            codewords,
        },
        trace,
    ))
}

impl Climber {
    /// Largest `|angle − θ|` over pairs, in micro-degrees so it orders exactly.
    fn worst_angle_error(&self, theta_deg: f64, length: usize) -> i64 {
        let mut worst = 0.0f64;
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                let a = (self.gram[i][j] as f64 / length as f64).clamp(-1.0, 1.0).acos().to_degrees();
                worst = worst.max((a - theta_deg).abs());
            }
        }
        (worst * 1e6).round() as i64
    }

    fn gram_within(&self, tol: f64) -> bool {
        (0..self.k()).all(|i| {
            (i + 1..self.k()).all(|j| ((self.gram[i][j] - self.target).abs() as f64) <= tol)
        })
    }
}

/// Symmetric matrix of pairwise angles in degrees; zero on the diagonal.
pub fn pairwise_angles(book: &Codebook) -> Vec<Vec<f64>> {
    let l = book.length as f64;
    let k = book.num_users();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let c = (book.codewords[i].dot(&book.codewords[j]) as f64 / l).clamp(-1.0, 1.0);
                out[i][j] = c.acos().to_degrees();
            }
        }
    }
    out
}

pub fn format_codebook(book: &Codebook) -> String {
    let mut s = String::new();
    writeln!(s, "{} {} {}", book.length, book.num_users(), book.theta_deg).unwrap();
    for cw in &book.codewords {
        let row: Vec<String> = cw.elements.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    s
}

pub fn save_codebook(book: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_codebook(book)).map_err(|e| Error::io(path, e))
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_codebook(&text).map_err(|reason| Error::format(path, reason))
}

pub fn parse_codebook(text: &str) -> std::result::Result<Codebook, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty file")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(format!("header needs `L K theta_deg`, got {header:?}"));
    }
    let length: usize = fields[0].parse().map_err(|_| "bad length")?;
    let k: usize = fields[1].parse().map_err(|_| "bad user count")?;
    let theta_deg: f64 = fields[2].parse().map_err(|_| "bad angle")?;
    if length == 0 {
        return Err("zero length".into());
    }
    let mut codewords = Vec::with_capacity(k);
    for user in 0..k {
        let line = lines
            .next()
            .ok_or_else(|| format!("expected {k} codewords, found {user}"))?;
        let elements = line
            .split_whitespace()
            .map(|tok| match tok {
                "1" | "+1" => Ok(1i8),
                "-1" => Ok(-1i8),
                other => Err(format!("entry {other:?} outside {{-1, +1}}")),
            })
            .collect::<std::result::Result<Vec<i8>, String>>()?;
        if elements.len() != length {
            return Err(format!(
                "codeword {} has {} entries, expected {length}",
                user + 1,
                elements.len()
            ));
        }
        codewords.push(Codeword {
            elements,
            user_index: user + 1,
        });
    }
    if lines.next().is_some() {
        return Err("trailing data after codewords".into());
    }
    Ok(Codebook {
        length,
        theta_deg,
        codewords,
    })
}
