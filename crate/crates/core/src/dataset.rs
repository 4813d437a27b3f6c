//! Sampled datasets `{(x_k, p_k, J̄_k)}`: Latin hypercube parameters,
//! projected random decisions and best-response values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::bestresponse::{best_response_at, BrConfig, BrStatus};
use crate::games::{GameKind, ParametricGame, StructureTag};
use crate::linalg::Mat;
use crate::optimize::project_onto_feasible;
use crate::textfmt::{fmt_f64, parse_f64, read_to_string, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::parse("split", format!("unknown split {s:?}"))),
        }
    }

    pub fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub game: String,
    pub split: Split,
    /// base seed before the split offset is added
    pub seed: u64,
    pub requested: usize,
    pub kept: usize,
    /// best responses that needed slack or came from a local search
    pub relaxed: usize,
    pub local: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `M x n_p`
    pub p: Mat,
    /// `M x n_x`
    pub x: Mat,
    /// `M x N`; absent for parameter-only data
    pub jbar: Option<Mat>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.p.rows
    }

    pub fn is_empty(&self) -> bool {
        self.p.rows == 0
    }

    pub fn n_p(&self) -> usize {
        self.p.cols
    }

    pub fn n_x(&self) -> usize {
        self.x.cols
    }

    pub fn check_game(&self, game: &ParametricGame) -> Result<()> {
        if self.p.cols != game.n_p {
            return Err(Error::dim("dataset parameters", game.n_p, self.p.cols));
        }
        if self.x.cols != game.n_x() {
            return Err(Error::dim("dataset decisions", game.n_x(), self.x.cols));
        }
        if let Some(j) = &self.jbar {
            if j.cols != game.n_agents() {
                return Err(Error::dim("dataset values", game.n_agents(), j.cols));
            }
        }
        Ok(())
    }

    /// CSV text: header `p_*, x_*, Jbar_*`, one record per line.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.p.cols).map(|j| format!("p_{j}")).collect();
        header.extend((0..self.x.cols).map(|j| format!("x_{j}")));
        if let Some(jb) = &self.jbar {
            header.extend((0..jb.cols).map(|j| format!("Jbar_{j}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.len() {
            let mut fields: Vec<String> = self.p.row(k).iter().map(|v| fmt_f64(*v)).collect();
            fields.extend(self.x.row(k).iter().map(|v| fmt_f64(*v)));
            if let Some(jb) = &self.jbar {
                fields.extend(jb.row(k).iter().map(|v| fmt_f64(*v)));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let mut kinds = Vec::with_capacity(header.len());
        for name in header.iter() {
            let (prefix, idx) = name
                .rsplit_once('_')
                .ok_or_else(|| Error::parse("dataset header", format!("bad column {name:?}")))?;
            if !matches!(prefix, "p" | "x" | "Jbar") || idx.parse::<usize>().is_err() {
                return Err(Error::parse("dataset header", format!("bad column {name:?}")));
            }
            kinds.push(prefix.to_string());
        }
        let count = |k: &str| kinds.iter().filter(|v| *v == k).count();
        let (np, nx, nj) = (count("p"), count("x"), count("Jbar"));
        let mut expected: Vec<String> = (0..np).map(|j| format!("p_{j}")).collect();
        expected.extend((0..nx).map(|j| format!("x_{j}")));
        expected.extend((0..nj).map(|j| format!("Jbar_{j}")));
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::parse("dataset header", "columns must be p_*, x_*, Jbar_* in order"));
        }
        let (mut p, mut x, mut j) = (Vec::new(), Vec::new(), Vec::new());
        let mut rows = 0;
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::parse("dataset", format!("row {} has {} fields", rows + 1, rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let v = parse_f64(field, "dataset")?;
                if c < np {
                    p.push(v);
                } else if c < np + nx {
                    x.push(v);
                } else {
                    j.push(v);
                }
            }
            rows += 1;
        }
        Ok(Dataset {
            p: Mat::from_vec(rows, np, p),
            x: Mat::from_vec(rows, nx, x),
            jbar: (nj > 0).then(|| Mat::from_vec(rows, nj, j)),
            provenance,
        })
    }

    /// Writes the CSV and a `.prov` sidecar with the provenance.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())?;
        write_atomic(&provenance_path(path), self.provenance.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let prov_path = provenance_path(path);
        let provenance = if prov_path.exists() {
            Provenance::from_text(&read_to_string(&prov_path)?)?
        } else {
            Provenance {
                game: String::new(),
                split: Split::Train,
                seed: 0,
                requested: 0,
                kept: 0,
                relaxed: 0,
                local: 0,
            }
        };
        let mut d = Dataset::from_csv(&read_to_string(path)?, provenance)?;
        if d.provenance.kept == 0 {
            d.provenance.kept = d.len();
            d.provenance.requested = d.len();
        }
        Ok(d)
    }
}

pub fn provenance_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov");
    PathBuf::from(s)
}

impl Provenance {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "game={}", self.game);
        let _ = writeln!(s, "split={}", self.split.name());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "requested={}", self.requested);
        let _ = writeln!(s, "kept={}", self.kept);
        let _ = writeln!(s, "relaxed={}", self.relaxed);
        let _ = writeln!(s, "local={}", self.local);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Provenance {
            game: String::new(),
            split: Split::Train,
            seed: 0,
            requested: 0,
            kept: 0,
            relaxed: 0,
            local: 0,
        };
        let num = |v: &str| v.parse::<u64>().map_err(|e| Error::parse("provenance", e.to_string()));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("provenance", format!("bad line {line:?}")))?;
            match k {
                "game" => p.game = v.to_string(),
                "split" => p.split = Split::parse(v)?,
                "seed" => p.seed = num(v)?,
                "requested" => p.requested = num(v)? as usize,
                "kept" => p.kept = num(v)? as usize,
                "relaxed" => p.relaxed = num(v)? as usize,
                "local" => p.local = num(v)? as usize,
                _ => return Err(Error::parse("provenance", format!("unknown key {k:?}"))),
            }
        }
        Ok(p)
    }
}

/// `m` points in the box with exactly one point per stratum `[j/m, (j+1)/m)`
/// in every coordinate.
pub fn latin_hypercube(m: usize, lb: &[f64], ub: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidArgument("latin hypercube needs m >= 1".into()));
    }
    if lb.len() != ub.len() {
        return Err(Error::dim("latin hypercube box", lb.len(), ub.len()));
    }
    if lb.iter().zip(ub).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
        return Err(Error::InvalidArgument("latin hypercube needs a finite nonempty box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; lb.len()]; m];
    for d in 0..lb.len() {
        let mut strata: Vec<usize> = (0..m).collect();
        // Fisher-Yates
        for k in (1..m).rev() {
            let j = rng.random_range(0..=k);
            strata.swap(k, j);
        }
        for (k, s) in strata.into_iter().enumerate() {
            let t = (s as f64 + rng.random::<f64>()) / m as f64;
            out[k][d] = (lb[d] + (ub[d] - lb[d]) * t).min(ub[d]);
        }
    }
    Ok(out)
}

fn sample_box(rng: &mut ChaCha8Rng, lb: &[f64], ub: &[f64]) -> Vec<f64> {
    lb.iter()
        .zip(ub)
        .map(|(&l, &u)| {
            let lo = if l.is_finite() { l } else { u.min(0.0) - 1.0 };
            let hi = if u.is_finite() { u } else { l.max(0.0) + 1.0 };
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect()
}

/// A feasible decision at `p`, or `Ok(None)` when the feasible set is empty.
pub fn sample_feasible_point_with(game: &ParametricGame, p: &[f64], rng: &mut ChaCha8Rng) -> Result<Option<Vec<f64>>> {
    if let GameKind::Switching { ell } = game.kind {
        let n = game.n_agents();
        let budget = p[0] - n as f64 * ell;
        if budget < 0.0 {
            return Ok(None);
        }
        // flat Dirichlet on n + 1 parts; the last part is the unused budget
        let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = e.iter().sum();
        return Ok(Some(e[..n].iter().map(|v| ell + budget * v / total).collect()));
    }
    let x_ref = sample_box(rng, &game.x_lb, &game.x_ub);
    match project_onto_feasible(game, p, &x_ref) {
        Ok(proj) => Ok(Some(proj.x)),
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn sample_feasible_point(game: &ParametricGame, p: &[f64], seed: u64) -> Result<Option<Vec<f64>>> {
    sample_feasible_point_with(game, p, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Which value columns [`build_dataset_with`] stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueColumns {
    BestResponse,
    Omit,
}

/// The default: best-response values for games; for single-agent problems
/// only the test split carries optimal values.
pub fn default_value_columns(game: &ParametricGame, split: Split) -> ValueColumns {
    if game.tag == StructureTag::SingleAgent && split != Split::Test {
        ValueColumns::Omit
    } else {
        ValueColumns::BestResponse
    }
}

pub fn build_dataset(game: &ParametricGame, m: usize, split: Split, seed: u64) -> Result<Dataset> {
    build_dataset_with(game, m, split, seed, default_value_columns(game, split))
}

struct Record {
    p: Vec<f64>,
    x: Vec<f64>,
    values: Vec<f64>,
    relaxed: bool,
    local: bool,
}

pub fn build_dataset_with(game: &ParametricGame, m: usize, split: Split, seed: u64, values: ValueColumns) -> Result<Dataset> {
    game.validate()?;
    let stream_seed = seed.wrapping_add(split.seed_offset());
    let params = latin_hypercube(m, &game.p_lb, &game.p_ub, stream_seed)?;
    let records: Vec<Option<Record>> = params
        .into_par_iter()
        .enumerate()
        .map(|(k, p)| -> Result<Option<Record>> {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
            rng.set_stream(k as u64 + 1);
            let Some(x) = sample_feasible_point_with(game, &p, &mut rng)? else {
                return Ok(None);
            };
            let mut rec = Record {
                p,
                x,
                values: Vec::new(),
                relaxed: false,
                local: false,
            };
            if values == ValueColumns::BestResponse {
                for i in 0..game.n_agents() {
                    let br = match best_response_at(game, i, &rec.x, &rec.p, &BrConfig::default()) {
                        Ok(br) => br,
                        Err(Error::Infeasible(_)) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                    match br.status {
                        BrStatus::Unbounded => return Ok(None),
                        BrStatus::Relaxed => rec.relaxed = true,
                        BrStatus::Local => rec.local = true,
                        BrStatus::Exact => {}
                    }
                    if !br.value.is_finite() {
                        return Ok(None);
                    }
                    rec.values.push(br.value);
                }
            }
            Ok(Some(rec))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<Record> = records.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: all {m} samples were excluded", game.name)));
    }
    let rows = kept.len();
    let provenance = Provenance {
        game: game.name.clone(),
        split,
        seed,
        requested: m,
        kept: rows,
        relaxed: kept.iter().filter(|r| r.relaxed).count(),
        local: kept.iter().filter(|r| r.local).count(),
    };
    let p = Mat::from_vec(rows, game.n_p, kept.iter().flat_map(|r| r.p.iter().copied()).collect());
    let x = Mat::from_vec(rows, game.n_x(), kept.iter().flat_map(|r| r.x.iter().copied()).collect());
    let jbar = (values == ValueColumns::BestResponse)
        .then(|| Mat::from_vec(rows, game.n_agents(), kept.iter().flat_map(|r| r.values.iter().copied()).collect()));
    Ok(Dataset { p, x, jbar, provenance })
}

/// Parameter-only data for single-agent training.
pub fn parameter_dataset(game: &ParametricGame, m: usize, split: Split, seed: u64) -> Result<Dataset> {
    build_dataset_with(game, m, split, seed, ValueColumns::Omit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{lq17, nonconvex21, nonmono18, random_mpqp, switching20};

    #[test]
    fn lhs_strata() {
        let s = latin_hypercube(4, &[0.0], &[1.0], 3).unwrap();
        let mut hit = [false; 4];
        for v in &s {
            hit[(v[0] * 4.0).floor() as usize] = true;
        }
        assert_eq!(hit, [true; 4]);
        let one = latin_hypercube(1, &[-2.0, 3.0], &[-1.0, 5.0], 0).unwrap();
        assert!((-2.0..=-1.0).contains(&one[0][0]) && (3.0..=5.0).contains(&one[0][1]));
        assert_eq!(latin_hypercube(7, &[0.0; 3], &[1.0; 3], 9).unwrap(), latin_hypercube(7, &[0.0; 3], &[1.0; 3], 9).unwrap());
        assert!(latin_hypercube(0, &[0.0], &[1.0], 0).is_err());
    }

    #[test]
    fn switching_samples_use_the_budget() {
        let g = switching20(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = [rng.random_range(0.03..2.0)];
            let x = sample_feasible_point_with(&g, &p, &mut rng).unwrap().unwrap();
            assert!(x.iter().sum::<f64>() <= p[0] + 1e-12);
            assert!(x.iter().all(|v| *v >= 0.01));
        }
    }

    #[test]
    fn nonmono18_tight_halfspace() {
        let g = nonmono18();
        for seed in 0..200 {
            let x = sample_feasible_point(&g, &[-1.0], seed).unwrap().unwrap();
            let (gv, _) = g.constraints(&x, &[-1.0]);
            assert!(gv.iter().all(|v| *v <= 1e-8));
        }
    }

    #[test]
    fn box_only_game_keeps_the_draw() {
        let g = nonconvex21(2);
        let x = sample_feasible_point(&g, &[0.0, 0.0], 5).unwrap().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(x, sample_box(&mut rng, &g.x_lb, &g.x_ub));
    }

    #[test]
    fn datasets_are_feasible_minimal_and_deterministic() {
        let g = lq17();
        let d = build_dataset(&g, 60, Split::Train, 7).unwrap();
        assert_eq!(d.len(), 60);
        assert_eq!(d.provenance.kept, 60);
        let jb = d.jbar.as_ref().unwrap();
        for k in 0..d.len() {
            let (x, p) = (d.x.row(k), d.p.row(k));
            assert!(g.shared_violation(x, p) <= 1e-8 && g.box_violation(x) <= 1e-8);
            for i in 0..2 {
                assert!(jb.get(k, i) <= g.cost(i, x, p) + 1e-9);
            }
        }
        let again = build_dataset(&g, 60, Split::Train, 7).unwrap();
        assert_eq!(d.to_csv(), again.to_csv());
        let val = build_dataset(&g, 60, Split::Val, 7).unwrap();
        assert_ne!(d.p, val.p);
    }

    #[test]
    fn csv_round_trip() {
        let g = nonmono18();
        let d = build_dataset(&g, 10, Split::Test, 3).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("p_0,x_0,x_1,Jbar_0,Jbar_1\n"));
        assert!(!text.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
        assert!(Dataset::from_csv("p_0,y_0\n1,2\n", d.provenance.clone()).is_err());
    }

    #[test]
    fn single_agent_training_data_has_no_values() {
        let g = random_mpqp(1, 3, 2, 5);
        let d = build_dataset(&g, 5, Split::Train, 0).unwrap();
        assert!(d.jbar.is_none());
        assert!(d.to_csv().starts_with("p_0,p_1,x_0,x_1,x_2\n"));
        assert!(build_dataset(&g, 5, Split::Test, 0).unwrap().jbar.is_some());
    }
}
