//! Text format for games.
//!
//! ```text
//! MPFIT-GAME v1
//! name lq17
//! tag lq
//! kind quadratic
//! agent_dims 1 1
//! n_p 2
//! p_lb 1x2 ...
//! ...arrays (quadratic, switching) or expression lines (custom)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{CustomData, Expr, GameKind, ParametricGame, QuadConstraint, QuadraticData, StructureTag};
use crate::linalg::Mat;
use crate::nn::parse_array_line;
use crate::textfmt::{fmt_f64, read_to_string, write_atomic};
use crate::{Error, Result};

pub const GAME_MAGIC: &str = "MPFIT-GAME v1";

fn push_array(s: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    write!(s, "{name} {rows}x{cols}").unwrap();
    for v in data {
        write!(s, " {}", fmt_f64(*v)).unwrap();
    }
    s.push('\n');
}

fn push_mat(s: &mut String, name: &str, m: &Mat) {
    push_array(s, name, m.rows, m.cols, &m.data);
}

fn push_vec(s: &mut String, name: &str, v: &[f64]) {
    push_array(s, name, 1, v.len(), v);
}

impl ParametricGame {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{GAME_MAGIC}").unwrap();
        writeln!(s, "name {}", self.name).unwrap();
        writeln!(s, "tag {}", self.tag.name()).unwrap();
        let kind = match &self.kind {
            GameKind::Quadratic(_) => "quadratic",
            GameKind::Switching { .. } => "switching",
            GameKind::NonconvexTanh => "nonconvex_tanh",
            GameKind::Custom(_) => "custom",
        };
        writeln!(s, "kind {kind}").unwrap();
        let dims: Vec<String> = self.agent_dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "agent_dims {}", dims.join(" ")).unwrap();
        writeln!(s, "n_p {}", self.n_p).unwrap();
        push_vec(&mut s, "p_lb", &self.p_lb);
        push_vec(&mut s, "p_ub", &self.p_ub);
        push_vec(&mut s, "x_lb", &self.x_lb);
        push_vec(&mut s, "x_ub", &self.x_ub);
        match &self.kind {
            GameKind::Quadratic(d) => {
                for i in 0..d.q.len() {
                    push_mat(&mut s, &format!("Q{i}"), &d.q[i]);
                    push_vec(&mut s, &format!("c{i}"), &d.c[i]);
                    push_mat(&mut s, &format!("F{i}"), &d.f[i]);
                }
                push_mat(&mut s, "A", &d.a);
                push_vec(&mut s, "b", &d.b);
                push_mat(&mut s, "S", &d.s);
                push_mat(&mut s, "E", &d.e);
                push_vec(&mut s, "e", &d.e_rhs);
                push_mat(&mut s, "T", &d.t);
                for (j, qc) in d.quad.iter().enumerate() {
                    push_mat(&mut s, &format!("Qc{j}"), &qc.q);
                    push_vec(&mut s, &format!("xc{j}"), &qc.center);
                    push_vec(&mut s, &format!("bc{j}"), &[qc.b]);
                    push_vec(&mut s, &format!("sc{j}"), &qc.s);
                }
            }
            GameKind::Switching { ell } => push_vec(&mut s, "ell", &[*ell]),
            GameKind::NonconvexTanh => {}
            GameKind::Custom(c) => {
                for (i, e) in c.costs.iter().enumerate() {
                    writeln!(s, "cost {i} {e}").unwrap();
                }
                for e in &c.ineq {
                    writeln!(s, "ineq {e}").unwrap();
                }
                for e in &c.eq {
                    writeln!(s, "eq {e}").unwrap();
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: String| Error::parse("game file", m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        if lines.next().map(str::trim_end) != Some(GAME_MAGIC) {
            return Err(perr(format!("first line must be {GAME_MAGIC:?}")));
        }
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut arrays: BTreeMap<String, Mat> = BTreeMap::new();
        let mut costs: BTreeMap<usize, Expr> = BTreeMap::new();
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        for line in lines {
            let (key, rest) = line.trim().split_once(char::is_whitespace).unwrap_or((line.trim(), ""));
            match key {
                "name" | "tag" | "kind" | "agent_dims" | "n_p" => {
                    header.insert(key.into(), rest.trim().into());
                }
                "cost" => {
                    let (i, e) = rest
                        .trim()
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| perr("cost line needs an agent index and an expression".into()))?;
                    let i: usize = i.parse().map_err(|_| perr(format!("bad agent index {i:?}")))?;
                    costs.insert(i, Expr::parse(e)?);
                }
                "ineq" => ineq.push(Expr::parse(rest)?),
                "eq" => eq.push(Expr::parse(rest)?),
                _ => {
                    let (name, m) = parse_array_line(line)?;
                    if arrays.insert(name.clone(), m).is_some() {
                        return Err(perr(format!("duplicate array {name}")));
                    }
                }
            }
        }
        let get = |k: &str| header.get(k).ok_or_else(|| perr(format!("missing {k:?} line")));
        let name = get("name")?.clone();
        let tag = StructureTag::parse(get("tag")?)?;
        let agent_dims = get("agent_dims")?
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|_| perr(format!("bad agent dimension {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let n_p: usize = get("n_p")?.parse().map_err(|_| perr("bad n_p".into()))?;
        let mut take = |k: &str| arrays.remove(k).ok_or_else(|| perr(format!("missing array {k}")));
        let p_lb = take("p_lb")?.data;
        let p_ub = take("p_ub")?.data;
        let x_lb = take("x_lb")?.data;
        let x_ub = take("x_ub")?.data;
        let kind = match get("kind")?.as_str() {
            "quadratic" => {
                let na = agent_dims.len();
                let (mut q, mut c, mut f) = (Vec::new(), Vec::new(), Vec::new());
                for i in 0..na {
                    q.push(take(&format!("Q{i}"))?);
                    c.push(take(&format!("c{i}"))?.data);
                    f.push(take(&format!("F{i}"))?);
                }
                let a = take("A")?;
                let b = take("b")?.data;
                let s = take("S")?;
                let e = take("E")?;
                let e_rhs = take("e")?.data;
                let t = take("T")?;
                let mut quad = Vec::new();
                let mut j = 0;
                while let Ok(qm) = take(&format!("Qc{j}")) {
                    quad.push(QuadConstraint {
                        q: qm,
                        center: take(&format!("xc{j}"))?.data,
                        b: take(&format!("bc{j}"))?.data.first().copied().ok_or_else(|| perr("empty bc".into()))?,
                        s: take(&format!("sc{j}"))?.data,
                    });
                    j += 1;
                }
                GameKind::Quadratic(QuadraticData {
                    q,
                    c,
                    f,
                    a,
                    b,
                    s,
                    e,
                    e_rhs,
                    t,
                    quad,
                })
            }
            "switching" => GameKind::Switching {
                ell: take("ell")?.data.first().copied().ok_or_else(|| perr("empty ell".into()))?,
            },
            "nonconvex_tanh" => GameKind::NonconvexTanh,
            "custom" => {
                let costs: Vec<Expr> = (0..agent_dims.len())
                    .map(|i| costs.remove(&i).ok_or_else(|| perr(format!("missing cost for agent {i}"))))
                    .collect::<Result<_>>()?;
                GameKind::Custom(CustomData { costs, ineq, eq })
            }
            other => return Err(perr(format!("unknown kind {other:?}"))),
        };
        if let Some(extra) = arrays.keys().next() {
            return Err(perr(format!("unexpected array {extra}")));
        }
        let game = ParametricGame {
            name,
            tag,
            agent_dims,
            n_p,
            p_lb,
            p_ub,
            x_lb,
            x_ub,
            kind,
        };
        game.validate()?;
        Ok(game)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn builtins_round_trip_bit_exactly() {
        for g in [
            lq17(),
            nonmono18(),
            qcqp19(),
            switching20(3),
            nonconvex21(2),
            random_mpqcqp(5, 3, 2, 4, 2),
        ] {
            let text = g.to_text();
            let back = ParametricGame::from_text(&text).unwrap();
            assert_eq!(back, g);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn custom_game_round_trip() {
        let text = "MPFIT-GAME v1\nname toy\ntag custom\nkind custom\nagent_dims 1 1\nn_p 1\n\
                    p_lb 1x1 0\np_ub 1x1 1\nx_lb 1x2 -1 -1\nx_ub 1x2 1 1\n\
                    cost 0 (+ (sq x0) (* x0 x1))\ncost 1 (+ (sq x1) (* p0 x1))\nineq (- (+ x0 x1) p0)\n";
        let g = ParametricGame::from_text(text).unwrap();
        assert_eq!(g.n_g(), 1);
        assert_eq!(g.cost(1, &[0.5, 2.0], &[0.25]), 4.5);
        let back = ParametricGame::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ParametricGame::from_text("MPFIT-GAME v2\n").is_err());
        let mut text = lq17().to_text();
        text = text.replace("agent_dims 1 1", "agent_dims 1 1 1");
        assert!(ParametricGame::from_text(&text).is_err());
        let text = lq17().to_text().replace("\nA ", "\nAA ");
        assert!(ParametricGame::from_text(&text).is_err());
    }
}
