//! Exact solve on row/column working sets. Columns start from the support of the
//! penalized solution (which is feasible, so every restricted problem is), rows
//! from the constraints that are nearly tight there. Violated rows are added
//! directly; columns are priced with the restricted duals.

use nalgebra::{DMatrix, DVector};

use super::ipm::{solve_conelp_with, ConeProgram, IpmOptions, NormalSolve, Scaling};
use crate::solvers::dense::Cholesky;
use super::{
    dantzig_objective, dantzig_violation, row_norms, DantzigOptions, DantzigProblem, DantzigSolution, WarmStart,
};
use crate::error::SolverError;

const MAX_ROUNDS: usize = 200;
const COLUMNS_PER_ROUND: usize = 20;
const PRICE_TOL: f64 = 1e-7;

/// Normal equations of the restricted problem with the l1 epigraph variables
/// (a, t) eliminated. Variables are ordered u (M*k), a (M*k), t; orthant rows
/// are (u - a, -u - a) per coordinate followed by one budget row per study.
struct ReducedKkt {
    m: usize,
    k: usize,
    daa: Vec<f64>,
    dua: Vec<f64>,
    dc: Vec<f64>,
    gamma: Vec<f64>,
    chol: Cholesky,
}

impl ReducedKkt {
    fn new(blocks: &[DMatrix<f64>], m: usize, k: usize, sc: &Scaling) -> Result<Self, SolverError> {
        let nu = m * k;
        let wt = |i: usize| 1.0 / (sc.lp[i] * sc.lp[i]);
        let mut daa = vec![0.0; nu];
        let mut dua = vec![0.0; nu];
        for i in 0..nu {
            let (da, db) = (wt(2 * i), wt(2 * i + 1));
            daa[i] = da + db;
            dua[i] = db - da;
        }
        let dc: Vec<f64> = (0..m).map(|s| wt(2 * nu + s)).collect();
        let gamma: Vec<f64> = (0..m)
            .map(|s| {
                let sm: f64 = daa[s * k..(s + 1) * k].iter().map(|d| 1.0 / d).sum();
                dc[s] / (1.0 + dc[s] * sm)
            })
            .collect();

        let dim = nu + 1;
        let mut kk = vec![0.0; dim * dim];
        // Cone part: sum_r H_a[r,.]^T (W_r^{-2})_{ab} H_b[r,.], assembled block by block.
        let w2: Vec<DMatrix<f64>> = sc.soc.iter().map(|s| &s.winv * &s.winv).collect();
        let nr = w2.len();
        let mut scaled = DMatrix::<f64>::zeros(nr, k);
        let mut blk = DMatrix::<f64>::zeros(k, k);
        for a in 0..m {
            for b in a..m {
                for c in 0..k {
                    for q in 0..nr {
                        scaled[(q, c)] = blocks[b][(q, c)] * w2[q][(1 + a, 1 + b)];
                    }
                }
                blocks[a].tr_mul_to(&scaled, &mut blk);
                for i in 0..k {
                    for j in 0..k {
                        kk[(a * k + i) * dim + b * k + j] += blk[(i, j)];
                        if a != b {
                            kk[(b * k + j) * dim + a * k + i] += blk[(i, j)];
                        }
                    }
                }
            }
        }
        // Orthant part after eliminating a: diag(daa) - Dua E^{-1} Dua, where
        // E_s = diag(daa_s) + dc_s 1 1^T.
        let mut f = vec![0.0; nu];
        let mut g: f64 = dc.iter().sum();
        for s in 0..m {
            let r = s * k..(s + 1) * k;
            let q: Vec<f64> = r.clone().map(|i| dua[i] / daa[i]).collect();
            let sm: f64 = r.clone().map(|i| 1.0 / daa[i]).sum();
            for (ii, i) in r.clone().enumerate() {
                kk[i * dim + i] += daa[i] - dua[i] * dua[i] / daa[i];
                for (jj, j) in r.clone().enumerate() {
                    kk[i * dim + j] += gamma[s] * q[ii] * q[jj];
                }
            }
            let scale = dc[s] * (1.0 - gamma[s] * sm);
            for i in r {
                f[i] = dua[i] * scale / daa[i];
            }
            g -= dc[s] * scale * sm;
        }
        for i in 0..nu {
            kk[i * dim + nu] = f[i];
            kk[nu * dim + i] = f[i];
        }
        kk[nu * dim + nu] = g;
        let chol = Cholesky::new_regularized(kk, dim)
            .ok_or_else(|| SolverError::NotPsd("reduced normal matrix is singular".into()))?;
        Ok(ReducedKkt { m, k, daa, dua, dc, gamma, chol })
    }

    /// E^{-1} x, block by block (Sherman-Morrison).
    fn e_inv(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; x.len()];
        for s in 0..self.m {
            let r = s * k..(s + 1) * k;
            let dot: f64 = r.clone().map(|i| x[i] / self.daa[i]).sum();
            for i in r {
                out[i] = (x[i] - self.gamma[s] * dot) / self.daa[i];
            }
        }
        out
    }
}

impl NormalSolve for ReducedKkt {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (m, k) = (self.m, self.k);
        let nu = m * k;
        let (bu, rest) = rhs.split_at(nu);
        let (ba, bt) = rest.split_at(nu);
        let eba = self.e_inv(ba);
        let mut red = vec![0.0; nu + 1];
        for i in 0..nu {
            red[i] = bu[i] - self.dua[i] * eba[i];
        }
        red[nu] = bt[0] + (0..m).map(|s| self.dc[s] * eba[s * k..(s + 1) * k].iter().sum::<f64>()).sum::<f64>();
        let sol = self.chol.solve(&red);
        let xt = sol[nu];
        let mut tmp = vec![0.0; nu];
        for s in 0..m {
            for i in s * k..(s + 1) * k {
                tmp[i] = ba[i] - self.dua[i] * sol[i] + self.dc[s] * xt;
            }
        }
        let xa = self.e_inv(&tmp);
        let mut out = Vec::with_capacity(2 * nu + 1);
        out.extend_from_slice(&sol[..nu]);
        out.extend_from_slice(&xa);
        out.push(xt);
        out
    }
}

struct Restricted {
    u: Vec<DVector<f64>>,
    budget_duals: Vec<f64>,
    /// soc_duals[k][m]: dual of study m's component in the cone of rows[k].
    soc_duals: Vec<Vec<f64>>,
    iterations: usize,
}

fn solve_restricted(problem: &DantzigProblem<'_>, cols: &[usize], rows: &[usize]) -> Result<Restricted, SolverError> {
    let h = problem.h;
    let m = h.len();
    let p = h[0].nrows();
    let k = cols.len();
    let nu = m * k;
    let n = 2 * nu + 1;
    let t = 2 * nu;
    let ui = |s: usize, c: usize| s * k + c;
    let ai = |s: usize, c: usize| nu + s * k + c;

    let mut g = Vec::with_capacity(2 * nu + m + rows.len() * (m + 1));
    let mut hv = Vec::with_capacity(g.capacity());
    for s in 0..m {
        for c in 0..k {
            g.push(vec![(ui(s, c), 1.0), (ai(s, c), -1.0)]);
            hv.push(0.0);
            g.push(vec![(ui(s, c), -1.0), (ai(s, c), -1.0)]);
            hv.push(0.0);
        }
    }
    for s in 0..m {
        let mut row: Vec<(usize, f64)> = (0..k).map(|c| (ai(s, c), 1.0)).collect();
        row.push((t, -1.0));
        g.push(row);
        hv.push(0.0);
    }
    let n_lp = g.len();
    for &r in rows {
        g.push(vec![]);
        hv.push(problem.tau);
        for s in 0..m {
            let row: Vec<(usize, f64)> = cols.iter().enumerate().map(|(c, &i)| (ui(s, c), h[s][(r, i)])).collect();
            g.push(row);
            hv.push(if r == problem.target { 1.0 } else { 0.0 });
        }
    }
    let mut cvec = vec![0.0; n];
    cvec[t] = 1.0;
    let prog = ConeProgram {
        n,
        c: cvec,
        rows: g,
        h: hv,
        n_lp,
        soc_dims: vec![m + 1; rows.len()],
    };
    let blocks: Vec<DMatrix<f64>> = h.iter().map(|hm| hm.select_rows(rows.iter()).select_columns(cols.iter())).collect();
    let build = |_: &ConeProgram, sc: &Scaling| -> Result<Box<dyn NormalSolve>, SolverError> {
        Ok(Box::new(ReducedKkt::new(&blocks, m, k, sc)?))
    };
    let sol = solve_conelp_with(&prog, &IpmOptions::default(), &build)?;

    let mut u = vec![DVector::zeros(p); m];
    for s in 0..m {
        for (c, &i) in cols.iter().enumerate() {
            u[s][i] = sol.x[ui(s, c)];
        }
    }
    let budget_duals = (0..m).map(|s| sol.z[2 * nu + s]).collect();
    let soc_duals = (0..rows.len())
        .map(|q| {
            let st = n_lp + q * (m + 1);
            (0..m).map(|s| sol.z[st + 1 + s]).collect()
        })
        .collect();
    Ok(Restricted { u, budget_duals, soc_duals, iterations: sol.iterations })
}

pub(super) fn solve(
    problem: &DantzigProblem<'_>,
    opts: &DantzigOptions,
    pen: &[DVector<f64>],
    hint: Option<&WarmStart>,
) -> Result<DantzigSolution, SolverError> {
    let h = problem.h;
    let m = h.len();
    let p = h[0].nrows();
    let j = problem.target;
    let tau = problem.tau;

    let mut in_cols = vec![false; p];
    let mut in_rows = vec![false; p];
    in_cols[j] = true;
    in_rows[j] = true;
    for i in 0..p {
        if pen.iter().any(|v| v[i] != 0.0) {
            in_cols[i] = true;
        }
    }
    for (r, nr) in row_norms(h, j, pen).into_iter().enumerate() {
        if nr >= 0.9 * tau {
            in_rows[r] = true;
        }
    }
    if let Some(w) = hint {
        w.columns.iter().for_each(|&i| in_cols[i] = true);
        w.rows.iter().for_each(|&i| in_rows[i] = true);
    }

    let mut iterations = 0;
    for _ in 0..MAX_ROUNDS {
        let cols: Vec<usize> = (0..p).filter(|&i| in_cols[i]).collect();
        let rows: Vec<usize> = (0..p).filter(|&i| in_rows[i]).collect();
        let res = match solve_restricted(problem, &cols, &rows) {
            Ok(r) => r,
            Err(_) if cols.len() < p => {
                // Numerical trouble on a small restriction: widen it and retry.
                in_cols.iter_mut().for_each(|c| *c = true);
                continue;
            }
            Err(e) => return Err(e),
        };
        iterations += res.iterations;

        let norms = row_norms(h, j, &res.u);
        let mut added = false;
        for r in 0..p {
            if !in_rows[r] && norms[r] > tau * (1.0 + 1e-9) {
                in_rows[r] = true;
                added = true;
            }
        }

        let mut priced: Vec<(f64, usize)> = Vec::new();
        for i in 0..p {
            if in_cols[i] {
                continue;
            }
            let mut worst = f64::NEG_INFINITY;
            for s in 0..m {
                let gsi: f64 = rows.iter().enumerate().map(|(q, &r)| h[s][(r, i)] * res.soc_duals[q][s]).sum();
                worst = worst.max(gsi.abs() - res.budget_duals[s]);
            }
            if worst > PRICE_TOL {
                priced.push((worst, i));
            }
        }
        priced.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, i) in priced.iter().take(COLUMNS_PER_ROUND) {
            in_cols[i] = true;
            added = true;
        }

        if !added {
            let violation = dantzig_violation(h, j, tau, &res.u);
            if violation > opts.feas_tol {
                return Err(SolverError::KktViolation { violation, tolerance: opts.feas_tol });
            }
            let columns = (0..p).filter(|&i| res.u.iter().any(|v| v[i] != 0.0)).collect();
            let active = norms.iter().enumerate().filter(|(_, &nr)| nr >= tau * (1.0 - 1e-6)).map(|(r, _)| r).collect();
            return Ok(DantzigSolution {
                objective: dantzig_objective(&res.u),
                u: res.u,
                max_violation: violation,
                iterations,
                warm: WarmStart { penalized: Vec::new(), columns, rows: active },
            });
        }
    }
    Err(SolverError::NonConvergence { iterations: MAX_ROUNDS, last_change: f64::NAN })
}
