//! Dense primal-dual interior-point method for
//!
//!   minimize c^T x  subject to  G x + s = h,  s in K,
//!
//! where K is a nonnegative orthant followed by second-order cones. Mehrotra
//! predictor-corrector with Nesterov-Todd scaling; the Newton system is reduced
//! to normal equations and factored by Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::solvers::dense::Cholesky;

pub(crate) type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub(crate) struct ConeProgram {
    pub n: usize,
    pub c: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub h: Vec<f64>,
    /// Number of leading orthant rows.
    pub n_lp: usize,
    /// Dimensions of the cones that follow, in order.
    pub soc_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConeSolution {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { feas_tol: 1e-8, gap_tol: 1e-9, max_iter: 100 }
    }
}

pub(crate) struct SocScaling {
    pub w: DMatrix<f64>,
    pub winv: DMatrix<f64>,
}

pub(crate) struct Scaling {
    /// Diagonal of W on the orthant rows.
    pub lp: Vec<f64>,
    pub soc: Vec<SocScaling>,
    lambda: Vec<f64>,
}

/// Solves with the normal matrix G^T W^{-2} G for one scaling.
pub(crate) trait NormalSolve {
    fn solve(&self, rhs: &[f64]) -> Vec<f64>;
}

/// Factors the normal matrix for a given scaling; lets callers exploit structure.
pub(crate) type NormalBuilder<'a> =
    dyn Fn(&ConeProgram, &Scaling) -> Result<Box<dyn NormalSolve + 'a>, SolverError> + 'a;

impl NormalSolve for Cholesky {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        Cholesky::solve(self, rhs)
    }
}

#[cfg(test)]
pub(crate) fn factor_dense(nm: &DMatrix<f64>) -> Result<Cholesky, SolverError> {
    let n = nm.nrows();
    // DMatrix is column-major; the matrix is symmetric so the transpose is free.
    Cholesky::new_regularized(nm.as_slice().to_vec(), n)
        .ok_or_else(|| SolverError::NotPsd("interior-point normal matrix is singular".into()))
}

#[cfg(test)]
fn dense_builder<'a>(prog: &ConeProgram, sc: &Scaling) -> Result<Box<dyn NormalSolve + 'a>, SolverError> {
    Ok(Box::new(factor_dense(&normal_matrix(prog, sc))?))
}

impl ConeProgram {
    fn m(&self) -> usize {
        self.rows.len()
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut start = self.n_lp;
        self.soc_dims.iter().map(move |&d| {
            let s = start;
            start += d;
            (s, d)
        })
    }

    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    fn gt_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &zi) in self.rows.iter().zip(z) {
            if zi != 0.0 {
                for &(j, v) in r {
                    out[j] += v * zi;
                }
            }
        }
        out
    }

    fn degree(&self) -> f64 {
        (self.n_lp + self.soc_dims.len()) as f64
    }

    /// Most negative eigenvalue of x with respect to the cone (negated), i.e. the
    /// smallest alpha with x + alpha e in the closed cone.
    fn max_infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for v in &x[..self.n_lp] {
            worst = worst.max(-v);
        }
        for (s, d) in self.blocks() {
            let tail = x[s + 1..s + d].iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(tail - x[s]);
        }
        worst
    }

    fn add_identity(&self, x: &mut [f64], alpha: f64) {
        for v in &mut x[..self.n_lp] {
            *v += alpha;
        }
        let starts: Vec<usize> = self.blocks().map(|(s, _)| s).collect();
        for s in starts {
            x[s] += alpha;
        }
    }
}

fn soc_j_norm(x: &[f64]) -> f64 {
    (x[0] * x[0] - x[1..].iter().map(|v| v * v).sum::<f64>()).max(0.0).sqrt()
}

fn nt_scaling(prog: &ConeProgram, s: &[f64], z: &[f64]) -> Scaling {
    let mut lp = Vec::with_capacity(prog.n_lp);
    let mut lambda = vec![0.0; prog.m()];
    for i in 0..prog.n_lp {
        lp.push((s[i] / z[i]).sqrt());
        lambda[i] = (s[i] * z[i]).sqrt();
    }
    let mut soc = Vec::with_capacity(prog.soc_dims.len());
    for (st, d) in prog.blocks() {
        let sb = &s[st..st + d];
        let zb = &z[st..st + d];
        let ns = soc_j_norm(sb);
        let nz = soc_j_norm(zb);
        let sbar: Vec<f64> = sb.iter().map(|v| v / ns).collect();
        let zbar: Vec<f64> = zb.iter().map(|v| v / nz).collect();
        let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) / 2.0).sqrt();
        let mut wbar = vec![0.0; d];
        wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
        for i in 1..d {
            wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
        }
        let eta = (ns / nz).sqrt();
        let mut w = DMatrix::zeros(d, d);
        let mut winv = DMatrix::zeros(d, d);
        w[(0, 0)] = wbar[0];
        winv[(0, 0)] = wbar[0];
        for i in 1..d {
            w[(0, i)] = wbar[i];
            w[(i, 0)] = wbar[i];
            winv[(0, i)] = -wbar[i];
            winv[(i, 0)] = -wbar[i];
            for k in 1..d {
                let v = wbar[i] * wbar[k] / (1.0 + wbar[0]) + if i == k { 1.0 } else { 0.0 };
                w[(i, k)] = v;
                winv[(i, k)] = v;
            }
        }
        w *= eta;
        winv /= eta;
        let zv = DVector::from_column_slice(zb);
        let l = &w * zv;
        lambda[st..st + d].copy_from_slice(l.as_slice());
        soc.push(SocScaling { w, winv });
    }
    Scaling { lp, soc, lambda }
}

impl Scaling {
    fn apply(&self, prog: &ConeProgram, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..prog.n_lp {
            out[i] = if inverse { v[i] / self.lp[i] } else { v[i] * self.lp[i] };
        }
        for ((st, d), sc) in prog.blocks().zip(&self.soc) {
            let mat = if inverse { &sc.winv } else { &sc.w };
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += mat[(i, k)] * v[st + k];
                }
                out[st + i] = acc;
            }
        }
        out
    }
}

/// Jordan product x o y.
fn jordan(prog: &ConeProgram, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..prog.n_lp {
        out[i] = x[i] * y[i];
    }
    for (st, d) in prog.blocks() {
        out[st] = (0..d).map(|k| x[st + k] * y[st + k]).sum();
        for k in 1..d {
            out[st + k] = x[st] * y[st + k] + y[st] * x[st + k];
        }
    }
    out
}

/// Solve lambda o w = d for w.
fn jordan_div(prog: &ConeProgram, lambda: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..prog.n_lp {
        out[i] = d[i] / lambda[i];
    }
    for (st, dim) in prog.blocks() {
        let l0 = lambda[st];
        let l1d1: f64 = (1..dim).map(|k| lambda[st + k] * d[st + k]).sum();
        let det = l0 * l0 - (1..dim).map(|k| lambda[st + k] * lambda[st + k]).sum::<f64>();
        let w0 = (l0 * d[st] - l1d1) / det;
        out[st] = w0;
        for k in 1..dim {
            out[st + k] = (d[st + k] - w0 * lambda[st + k]) / l0;
        }
    }
    out
}

/// Largest step alpha with x + alpha dx in the cone, for x in its interior.
fn max_step(prog: &ConeProgram, x: &[f64], dx: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..prog.n_lp {
        if dx[i] < 0.0 {
            alpha = alpha.min(-x[i] / dx[i]);
        }
    }
    for (st, d) in prog.blocks() {
        let (x0, d0) = (x[st], dx[st]);
        let mut x1x1 = 0.0;
        let mut x1d1 = 0.0;
        let mut d1d1 = 0.0;
        for k in 1..d {
            x1x1 += x[st + k] * x[st + k];
            x1d1 += x[st + k] * dx[st + k];
            d1d1 += dx[st + k] * dx[st + k];
        }
        let a = d0 * d0 - d1d1;
        let b = x0 * d0 - x1d1;
        let c = (x0 * x0 - x1x1).max(0.0);
        let mut roots = Vec::with_capacity(2);
        if a.abs() <= 1e-300 {
            if b < 0.0 {
                roots.push(-c / (2.0 * b));
            }
        } else {
            let disc = b * b - a * c;
            if disc >= 0.0 {
                let q = -(b + b.signum() * disc.sqrt());
                if q != 0.0 {
                    roots.push(q / a);
                    roots.push(c / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
        for r in roots {
            if r >= 0.0 {
                alpha = alpha.min(r);
            }
        }
        if d0 < 0.0 {
            alpha = alpha.min(-x0 / d0);
        }
    }
    alpha
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
/// Add the orthant rows' contribution to G^T W^{-2} G.
pub(crate) fn add_lp_normal(prog: &ConeProgram, sc: &Scaling, nm: &mut DMatrix<f64>) {
    for i in 0..prog.n_lp {
        let wt = 1.0 / (sc.lp[i] * sc.lp[i]);
        let row = &prog.rows[i];
        for &(a, va) in row {
            for &(b, vb) in row {
                nm[(a, b)] += wt * va * vb;
            }
        }
    }
}

#[cfg(test)]
/// Normal matrix G^T W^{-2} G from the sparse rows.
pub(crate) fn normal_matrix(prog: &ConeProgram, sc: &Scaling) -> DMatrix<f64> {
    let n = prog.n;
    let mut nm = DMatrix::<f64>::zeros(n, n);
    add_lp_normal(prog, sc, &mut nm);
    for ((st, d), soc) in prog.blocks().zip(&sc.soc) {
        let mut cols: Vec<usize> = (st..st + d).flat_map(|r| prog.rows[r].iter().map(|&(j, _)| j)).collect();
        cols.sort_unstable();
        cols.dedup();
        if cols.is_empty() {
            continue;
        }
        let mut gb = DMatrix::<f64>::zeros(d, cols.len());
        for r in 0..d {
            for &(j, v) in &prog.rows[st + r] {
                let pos = cols.binary_search(&j).unwrap();
                gb[(r, pos)] += v;
            }
        }
        let scaled = &soc.winv * gb;
        let contrib = scaled.tr_mul(&scaled);
        for (a, &ca) in cols.iter().enumerate() {
            for (b, &cb) in cols.iter().enumerate() {
                nm[(ca, cb)] += contrib[(a, b)];
            }
        }
    }
    nm
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
    ds_scaled: Vec<f64>,
    dz_scaled: Vec<f64>,
}

fn solve_newton(
    prog: &ConeProgram,
    sc: &Scaling,
    fac: &dyn NormalSolve,
    rx: &[f64],
    rz: &[f64],
    ds_rhs: &[f64],
) -> Direction {
    let t = jordan_div(prog, &sc.lambda, ds_rhs);
    let wrz = sc.apply(prog, rz, true);
    let inner: Vec<f64> = wrz.iter().zip(&t).map(|(a, b)| a + b).collect();
    let g_inner = prog.gt_mul(&sc.apply(prog, &inner, true));
    let rhs: Vec<f64> = rx.iter().zip(&g_inner).map(|(a, b)| -a - b).collect();
    let dx = fac.solve(&rhs);
    let gdx = sc.apply(prog, &prog.g_mul(&dx), true);
    let dz_scaled: Vec<f64> = gdx.iter().zip(&inner).map(|(a, b)| a + b).collect();
    let ds_scaled: Vec<f64> = t.iter().zip(&dz_scaled).map(|(a, b)| a - b).collect();
    let dz = sc.apply(prog, &dz_scaled, true);
    let ds = sc.apply(prog, &ds_scaled, false);
    Direction { dx, ds, dz, ds_scaled, dz_scaled }
}

#[cfg(test)]
pub(crate) fn solve_conelp(prog: &ConeProgram, opts: &IpmOptions) -> Result<ConeSolution, SolverError> {
    solve_conelp_with(prog, opts, &dense_builder)
}

pub(crate) fn solve_conelp_with(
    prog: &ConeProgram,
    opts: &IpmOptions,
    build: &NormalBuilder<'_>,
) -> Result<ConeSolution, SolverError> {
    let m = prog.m();
    let n = prog.n;
    if prog.h.len() != m || prog.c.len() != n {
        return Err(SolverError::InvalidInput("cone program dimensions do not match".into()));
    }

    // Least-squares primal and least-norm dual starting points, shifted into the cone.
    let ident = Scaling {
        lp: vec![1.0; prog.n_lp],
        soc: prog
            .soc_dims
            .iter()
            .map(|&d| SocScaling { w: DMatrix::identity(d, d), winv: DMatrix::identity(d, d) })
            .collect(),
        lambda: vec![],
    };
    let fac0 = build(prog, &ident)?;
    let x0 = fac0.solve(&prog.gt_mul(&prog.h));
    let gx0 = prog.g_mul(&x0);
    let mut s: Vec<f64> = prog.h.iter().zip(&gx0).map(|(h, g)| h - g).collect();
    let y0 = fac0.solve(&prog.c);
    let mut z: Vec<f64> = prog.g_mul(&y0).iter().map(|v| -v).collect();
    let mut x = x0;
    for v in [&mut s, &mut z] {
        let a = prog.max_infeasibility(v);
        if a >= -1e-8 {
            prog.add_identity(v, 1.0 + a.max(0.0));
        }
    }

    let hnorm = norm(&prog.h).max(1.0);
    let cnorm = norm(&prog.c).max(1.0);
    let nu = prog.degree();
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for it in 0..opts.max_iter {
        let gz = prog.gt_mul(&z);
        let rx: Vec<f64> = gz.iter().zip(&prog.c).map(|(a, b)| a + b).collect();
        let gx = prog.g_mul(&x);
        let rz: Vec<f64> = (0..m).map(|i| s[i] + gx[i] - prog.h[i]).collect();
        let gap = dot(&s, &z);
        let pcost = dot(&prog.c, &x);
        let dcost = -dot(&prog.h, &z);
        let pres = norm(&rz) / hnorm;
        let dres = norm(&rx) / cnorm;
        let relgap = gap / pcost.abs().max(dcost.abs()).max(1.0);
        last = (pres, dres, relgap);
        if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
            return Ok(ConeSolution { x, z, iterations: it });
        }

        let sc = nt_scaling(prog, &s, &z);
        let fac = build(prog, &sc)?;
        let mu = gap / nu;

        let ll = jordan(prog, &sc.lambda, &sc.lambda);
        let ds_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let aff = solve_newton(prog, &sc, fac.as_ref(), &rx, &rz, &ds_aff);
        let alpha_aff = max_step(prog, &sc.lambda, &aff.ds_scaled)
            .min(max_step(prog, &sc.lambda, &aff.dz_scaled))
            .min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        let cross = jordan(prog, &aff.ds_scaled, &aff.dz_scaled);
        let mut ds_comb: Vec<f64> = (0..m).map(|i| -ll[i] - cross[i]).collect();
        prog.add_identity(&mut ds_comb, sigma * mu);
        let dir = solve_newton(prog, &sc, fac.as_ref(), &rx, &rz, &ds_comb);
        let alpha = (0.99
            * max_step(prog, &sc.lambda, &dir.ds_scaled).min(max_step(prog, &sc.lambda, &dir.dz_scaled)))
        .min(1.0);

        for i in 0..n {
            x[i] += alpha * dir.dx[i];
        }
        for i in 0..m {
            s[i] += alpha * dir.ds[i];
            z[i] += alpha * dir.dz[i];
        }
        if !alpha.is_finite() || alpha < 1e-12 {
            break;
        }
    }
    let (pres, dres, relgap) = last;
    if pres <= 1e2 * opts.feas_tol && dres <= 1e2 * opts.feas_tol && relgap <= 1e2 * opts.gap_tol {
        return Ok(ConeSolution { x, z, iterations: opts.max_iter });
    }
    Err(SolverError::NonConvergence {
        iterations: opts.max_iter,
        last_change: pres.max(dres).max(relgap),
    })
}
