//! Power-balance residuals, operational-limit residuals, their squared
//! penalties with analytic gradients, and a polar Newton–Raphson solver.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, sin, sqrt};

use crate::grid::{AdmittanceMatrix, BranchSpec, BusType, GridCase};
use crate::linalg::lu_solve;
use crate::{Error, Result};

/// Operating point `[P | Q | V | θ]` of an `n`-bus grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateVector {
    n: usize,
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; 4 * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len(4 * n, data.len())?;
        Ok(Self { n, data })
    }

    pub fn from_parts(p: &[f64], q: &[f64], v: &[f64], theta: &[f64]) -> Result<Self> {
        let n = p.len();
        for part in [q, v, theta] {
            check_len(n, part.len())?;
        }
        let mut data = Vec::with_capacity(4 * n);
        data.extend_from_slice(p);
        data.extend_from_slice(q);
        data.extend_from_slice(v);
        data.extend_from_slice(theta);
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn p(&self) -> &[f64] {
        &self.data[..self.n]
    }

    pub fn q(&self) -> &[f64] {
        &self.data[self.n..2 * self.n]
    }

    pub fn v(&self) -> &[f64] {
        &self.data[2 * self.n..3 * self.n]
    }

    pub fn theta(&self) -> &[f64] {
        &self.data[3 * self.n..]
    }

    /// Euclidean distance between two states of the same grid.
    pub fn distance(&self, other: &StateVector) -> f64 {
        sqrt(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        )
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

fn check_state(state: &StateVector, grid: &GridCase) -> Result<()> {
    check_len(grid.n(), state.n)
}

/// Which operational limits enter `G(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LimitSet {
    pub voltage: bool,
    pub generator: bool,
    pub branch: bool,
}

impl LimitSet {
    pub const ALL: LimitSet = LimitSet {
        voltage: true,
        generator: true,
        branch: true,
    };

    /// Voltage and generator boxes only, no thermal limits.
    pub const BOX_ONLY: LimitSet = LimitSet {
        voltage: true,
        generator: true,
        branch: false,
    };
}

impl LimitSet {
    /// Voltage band and thermal limits, no generator capability.
    pub const NETWORK: LimitSet = LimitSet {
        voltage: true,
        generator: false,
        branch: true,
    };
}

impl Default for LimitSet {
    fn default() -> Self {
        Self::ALL
    }
}

/// Computed injections and their partial derivatives, all `n × n` row-major
/// with row = bus injection, column = variable.
#[derive(Debug, Clone)]
pub struct InjectionJacobian {
    pub n: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub dp_dth: Vec<f64>,
    pub dp_dv: Vec<f64>,
    pub dq_dth: Vec<f64>,
    pub dq_dv: Vec<f64>,
}

/// Net injections `P_i, Q_i` implied by `V, θ` through `Y_bus`.
pub fn bus_injections(v: &[f64], theta: &[f64], y: &AdmittanceMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.n;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let (g, b) = (y.g(i, j), y.b(i, j));
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let d = theta[i] - theta[j];
            let (s, c) = (sin(d), cos(d));
            pi += v[j] * (g * c + b * s);
            qi += v[j] * (g * s - b * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Injections together with the polar power-flow Jacobian blocks.
pub fn injection_jacobian(v: &[f64], theta: &[f64], y: &AdmittanceMatrix) -> InjectionJacobian {
    let n = y.n;
    let mut jac = InjectionJacobian {
        n,
        p: vec![0.0; n],
        q: vec![0.0; n],
        dp_dth: vec![0.0; n * n],
        dp_dv: vec![0.0; n * n],
        dq_dth: vec![0.0; n * n],
        dq_dv: vec![0.0; n * n],
    };
    for i in 0..n {
        let ii = i * n + i;
        let (gii, bii) = (y.g(i, i), y.b(i, i));
        jac.p[i] = v[i] * v[i] * gii;
        jac.q[i] = -v[i] * v[i] * bii;
        jac.dp_dv[ii] = 2.0 * v[i] * gii;
        jac.dq_dv[ii] = -2.0 * v[i] * bii;
        for j in 0..n {
            if j == i {
                continue;
            }
            let (g, b) = (y.g(i, j), y.b(i, j));
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let d = theta[i] - theta[j];
            let (s, c) = (sin(d), cos(d));
            let a = g * c + b * s;
            let e = g * s - b * c;
            let vv = v[i] * v[j];
            let ij = i * n + j;
            jac.p[i] += vv * a;
            jac.q[i] += vv * e;
            jac.dp_dth[ij] = vv * e;
            jac.dp_dth[ii] -= vv * e;
            jac.dq_dth[ij] = -vv * a;
            jac.dq_dth[ii] += vv * a;
            jac.dp_dv[ij] = v[i] * a;
            jac.dp_dv[ii] += v[j] * a;
            jac.dq_dv[ij] = v[i] * e;
            jac.dq_dv[ii] += v[j] * e;
        }
    }
    jac
}

/// Power-balance residuals `H(x)`: active mismatches in `0..n`, reactive in
/// `n..2n`.
pub fn eval_h(state: &StateVector, grid: &GridCase) -> Result<Vec<f64>> {
    check_state(state, grid)?;
    let (p, q) = bus_injections(state.v(), state.theta(), &grid.ybus);
    let mut h = Vec::with_capacity(2 * grid.n());
    h.extend(state.p().iter().zip(&p).map(|(s, c)| s - c));
    h.extend(state.q().iter().zip(&q).map(|(s, c)| s - c));
    Ok(h)
}

/// Apparent-power flow at one end of a branch and its partials.
///
/// `a`, `c` are the own/far voltage magnitudes and `d` the angle difference
/// own minus far. `(gii, bii)` is the own diagonal contribution and
/// `(gij, bij)` the transfer admittance.
struct EndFlow {
    p: f64,
    q: f64,
    /// Partials of `P` and `Q` w.r.t. `(a, c, d)`.
    dp: [f64; 3],
    dq: [f64; 3],
}

fn end_flow(a: f64, c: f64, d: f64, own: (f64, f64), transfer: (f64, f64)) -> EndFlow {
    let (gii, bii) = own;
    let (gij, bij) = transfer;
    let (s, co) = (sin(d), cos(d));
    let k1 = gij * co + bij * s;
    let k2 = gij * s - bij * co;
    EndFlow {
        p: a * a * gii + a * c * k1,
        q: -a * a * bii + a * c * k2,
        dp: [2.0 * a * gii + c * k1, a * k1, -a * c * k2],
        dq: [-2.0 * a * bii + c * k2, a * k2, a * c * k1],
    }
}

/// Flows `(S_from, S_to)` as `((P, Q), (P, Q))` for one branch.
fn branch_ends(br: &BranchSpec, v: &[f64], theta: &[f64]) -> (EndFlow, EndFlow) {
    let (gs, bs) = br.series_admittance();
    let bc = br.b_charging / 2.0;
    let tau = br.tap;
    let tau2 = tau * tau;
    let transfer = (-gs / tau, -bs / tau);
    let (vf, vt) = (v[br.from], v[br.to]);
    let d = theta[br.from] - theta[br.to];
    let from = end_flow(vf, vt, d, (gs / tau2, (bs + bc) / tau2), transfer);
    let to = end_flow(vt, vf, -d, (gs, bs + bc), transfer);
    (from, to)
}

/// Complex power leaving each end of every branch, `[(P_f, Q_f, P_t, Q_t)]`.
pub fn branch_flows(state: &StateVector, grid: &GridCase) -> Result<Vec<[f64; 4]>> {
    check_state(state, grid)?;
    Ok(grid
        .branches
        .iter()
        .map(|br| {
            let (f, t) = branch_ends(br, state.v(), state.theta());
            [f.p, f.q, t.p, t.q]
        })
        .collect())
}

/// Active losses in series elements, charging and shunt conductances.
pub fn active_losses(state: &StateVector, grid: &GridCase) -> Result<f64> {
    let flows = branch_flows(state, grid)?;
    let series: f64 = flows.iter().map(|f| f[0] + f[2]).sum();
    let shunt: f64 = grid
        .buses
        .iter()
        .zip(state.v())
        .map(|(b, v)| b.shunt_g * v * v)
        .sum();
    Ok(series + shunt)
}

/// Walk every inequality `G_k(x) ≤ 0` in canonical order, passing its value and
/// the non-zero partials `(state index, ∂G_k/∂x)`.
///
/// Order: voltage upper bounds, voltage lower bounds, then per generator
/// `(Pmax, Pmin, Qmax, Qmin)`, then per limited branch `(from end, to end)`.
fn visit_inequalities(
    state: &StateVector,
    grid: &GridCase,
    limits: LimitSet,
    mut visit: impl FnMut(f64, &[(usize, f64)]),
) {
    let n = grid.n();
    let (iv, ith) = (2 * n, 3 * n);
    if limits.voltage {
        for (i, bus) in grid.buses.iter().enumerate() {
            visit(state.v()[i] - bus.vmax, &[(iv + i, 1.0)]);
        }
        for (i, bus) in grid.buses.iter().enumerate() {
            visit(bus.vmin - state.v()[i], &[(iv + i, -1.0)]);
        }
    }
    if limits.generator {
        for gen in &grid.gens {
            let i = gen.bus;
            let bus = &grid.buses[i];
            let pg = state.p()[i] + bus.pd;
            let qg = state.q()[i] + bus.qd;
            visit(pg - gen.pmax, &[(i, 1.0)]);
            visit(gen.pmin - pg, &[(i, -1.0)]);
            visit(qg - gen.qmax, &[(n + i, 1.0)]);
            visit(gen.qmin - qg, &[(n + i, -1.0)]);
        }
    }
    if limits.branch {
        for br in grid.branches.iter().filter(|b| b.smax > 0.0) {
            let (from, to) = branch_ends(br, state.v(), state.theta());
            for (end, own, far) in [(from, br.from, br.to), (to, br.to, br.from)] {
                let s = sqrt(end.p * end.p + end.q * end.q);
                let value = s - br.smax;
                if s > 0.0 {
                    let ds = |k: usize| (end.p * end.dp[k] + end.q * end.dq[k]) / s;
                    let dd = ds(2);
                    visit(
                        value,
                        &[
                            (iv + own, ds(0)),
                            (iv + far, ds(1)),
                            (ith + own, dd),
                            (ith + far, -dd),
                        ],
                    );
                } else {
                    visit(value, &[]);
                }
            }
        }
    }
}

/// Signed operational-limit residuals over all limit families; positive
/// entries are violations.
pub fn eval_g(state: &StateVector, grid: &GridCase) -> Result<Vec<f64>> {
    eval_g_with(state, grid, LimitSet::ALL)
}

pub fn eval_g_with(state: &StateVector, grid: &GridCase, limits: LimitSet) -> Result<Vec<f64>> {
    check_state(state, grid)?;
    let mut g = Vec::new();
    visit_inequalities(state, grid, limits, |value, _| g.push(value));
    Ok(g)
}

/// `H(x)`, the violations `max(G(x), 0)`, and their squared norms.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResidualReport {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub r_h: f64,
    pub r_g: f64,
}

pub fn residual_penalties(state: &StateVector, grid: &GridCase) -> Result<ResidualReport> {
    residual_penalties_with(state, grid, LimitSet::ALL)
}

pub fn residual_penalties_with(
    state: &StateVector,
    grid: &GridCase,
    limits: LimitSet,
) -> Result<ResidualReport> {
    let h = eval_h(state, grid)?;
    let g: Vec<f64> = eval_g_with(state, grid, limits)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let r_h = h.iter().map(|v| v * v).sum();
    let r_g = g.iter().map(|v| v * v).sum();
    Ok(ResidualReport { h, g, r_h, r_g })
}

/// Analytic `∇ₓ (R_H + R_G)`.
pub fn grad_penalties(state: &StateVector, grid: &GridCase) -> Result<Vec<f64>> {
    grad_penalties_with(state, grid, LimitSet::ALL)
}

pub fn grad_penalties_with(
    state: &StateVector,
    grid: &GridCase,
    limits: LimitSet,
) -> Result<Vec<f64>> {
    check_state(state, grid)?;
    let n = grid.n();
    let jac = injection_jacobian(state.v(), state.theta(), &grid.ybus);
    let mut grad = vec![0.0; 4 * n];

    // R_H = Σ h²,  h_P = P − P(V,θ),  h_Q = Q − Q(V,θ).
    for i in 0..n {
        let hp = state.p()[i] - jac.p[i];
        let hq = state.q()[i] - jac.q[i];
        grad[i] += 2.0 * hp;
        grad[n + i] += 2.0 * hq;
        if hp == 0.0 && hq == 0.0 {
            continue;
        }
        for k in 0..n {
            let ik = i * n + k;
            grad[2 * n + k] -= 2.0 * (hp * jac.dp_dv[ik] + hq * jac.dq_dv[ik]);
            grad[3 * n + k] -= 2.0 * (hp * jac.dp_dth[ik] + hq * jac.dq_dth[ik]);
        }
    }

    // R_G = Σ max(G, 0)²; the derivative vanishes on the inactive side and at
    // the boundary itself.
    visit_inequalities(state, grid, limits, |value, partials| {
        if value > 0.0 {
            for &(idx, d) in partials {
                grad[idx] += 2.0 * value * d;
            }
        }
    });
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrOptions {
    pub max_iter: usize,
    /// Infinity-norm mismatch tolerance, per-unit.
    pub tol: f64,
}

impl Default for NrOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PfSolution {
    pub state: StateVector,
    pub iterations: usize,
    pub final_mismatch: f64,
    pub converged: bool,
    /// Mismatch infinity norm before each correction and after the last.
    pub mismatch_history: Vec<f64>,
}

/// Per-bus demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Loads {
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
}

impl Loads {
    pub fn baseline(grid: &GridCase) -> Self {
        Self {
            pd: grid.buses.iter().map(|b| b.pd).collect(),
            qd: grid.buses.iter().map(|b| b.qd).collect(),
        }
    }
}

/// Solve the power flow for given demand and per-bus active generation.
///
/// `dispatch[i]` is the generator output at bus `i`; it must be zero where
/// there is no generator and is ignored at the slack bus. PV buses and the
/// slack hold their generator voltage setpoint. Flat start.
pub fn newton_raphson(grid: &GridCase, loads: &Loads, dispatch: &[f64]) -> Result<PfSolution> {
    newton_raphson_with(grid, loads, dispatch, NrOptions::default())
}

pub fn newton_raphson_with(
    grid: &GridCase,
    loads: &Loads,
    dispatch: &[f64],
    opts: NrOptions,
) -> Result<PfSolution> {
    let n = grid.n();
    check_len(n, loads.pd.len())?;
    check_len(n, loads.qd.len())?;
    check_len(n, dispatch.len())?;
    for (i, &pg) in dispatch.iter().enumerate() {
        if pg != 0.0 && grid.gen_at_bus[i].is_none() {
            return Err(Error::Validation(alloc::format!(
                "dispatch assigns generation to bus {} without a generator",
                grid.buses[i].id
            )));
        }
    }
    let p_spec: Vec<f64> = (0..n).map(|i| dispatch[i] - loads.pd[i]).collect();
    let q_spec: Vec<f64> = (0..n).map(|i| -loads.qd[i]).collect();
    let v0: Vec<f64> = (0..n)
        .map(|i| grid.gen_at(i).filter(|_| grid.buses[i].bus_type != BusType::Pq).map_or(1.0, |g| g.vset))
        .collect();
    let th0 = vec![0.0; n];
    solve(grid, &p_spec, &q_spec, v0, th0, opts)
}

/// Core polar Newton–Raphson. `v0` must already carry the setpoints of the
/// slack and PV buses; the slack angle is pinned at `th0[slack]`.
fn solve(
    grid: &GridCase,
    p_spec: &[f64],
    q_spec: &[f64],
    mut v: Vec<f64>,
    mut th: Vec<f64>,
    opts: NrOptions,
) -> Result<PfSolution> {
    let n = grid.n();
    let pvpq: Vec<usize> = (0..n).filter(|&i| i != grid.slack).collect();
    let pq: Vec<usize> = (0..n)
        .filter(|&i| grid.buses[i].bus_type == BusType::Pq)
        .collect();
    let (na, nv) = (pvpq.len(), pq.len());
    let dim = na + nv;

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut mismatch = vec![0.0; dim];
    let mut jmat = vec![0.0; dim * dim];
    let (converged, final_mismatch, jac) = loop {
        let jac = injection_jacobian(&v, &th, &grid.ybus);
        for (r, &i) in pvpq.iter().enumerate() {
            mismatch[r] = p_spec[i] - jac.p[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            mismatch[na + r] = q_spec[i] - jac.q[i];
        }
        let m = mismatch
            .iter()
            .fold(0.0f64, |acc, x| if x.is_finite() { acc.max(x.abs()) } else { f64::INFINITY });
        history.push(m);
        if m < opts.tol {
            break (true, m, jac);
        }
        if !m.is_finite() || iterations >= opts.max_iter {
            break (false, m, jac);
        }

        for (r, &i) in pvpq.iter().enumerate() {
            let row = &mut jmat[r * dim..(r + 1) * dim];
            for (c, &k) in pvpq.iter().enumerate() {
                row[c] = jac.dp_dth[i * n + k];
            }
            for (c, &k) in pq.iter().enumerate() {
                row[na + c] = jac.dp_dv[i * n + k];
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            let row = &mut jmat[(na + r) * dim..(na + r + 1) * dim];
            for (c, &k) in pvpq.iter().enumerate() {
                row[c] = jac.dq_dth[i * n + k];
            }
            for (c, &k) in pq.iter().enumerate() {
                row[na + c] = jac.dq_dv[i * n + k];
            }
        }
        let mut dx = mismatch.clone();
        if dim > 0 && lu_solve(&mut jmat, &mut dx).is_none() {
            return Err(Error::SingularJacobian { iteration: iterations });
        }
        for (r, &i) in pvpq.iter().enumerate() {
            th[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            v[i] += dx[na + r];
        }
        iterations += 1;
    };

    let mut p = p_spec.to_vec();
    let mut q = q_spec.to_vec();
    p[grid.slack] = jac.p[grid.slack];
    for i in 0..n {
        if grid.buses[i].bus_type != BusType::Pq {
            q[i] = jac.q[i];
        }
    }
    Ok(PfSolution {
        state: StateVector::from_parts(&p, &q, &v, &th)?,
        iterations,
        final_mismatch,
        converged,
        mismatch_history: history,
    })
}

/// Result of restoring exact power-flow feasibility for a generated sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Projection {
    pub solution: PfSolution,
    /// Euclidean distance between the input and projected states.
    pub distance: f64,
}

/// Re-solve the power flow around a generated sample.
///
/// The sample's injections at non-slack buses (and reactive injections at PQ
/// buses) are held, as are the voltage magnitudes of the slack and PV buses.
/// The solver starts from the sample's `V, θ` with angles re-referenced to
/// the slack. Non-convergence is reported through `converged`, not as an
/// error.
pub fn project_to_feasible(state: &StateVector, grid: &GridCase) -> Result<Projection> {
    project_to_feasible_with(state, grid, NrOptions::default())
}

pub fn project_to_feasible_with(
    state: &StateVector,
    grid: &GridCase,
    opts: NrOptions,
) -> Result<Projection> {
    check_state(state, grid)?;
    let usable = state.as_slice().iter().all(|x| x.is_finite())
        && state.v().iter().all(|&v| v > 0.0);
    if !usable {
        return Ok(Projection {
            solution: PfSolution {
                state: state.clone(),
                iterations: 0,
                final_mismatch: f64::INFINITY,
                converged: false,
                mismatch_history: Vec::new(),
            },
            distance: f64::INFINITY,
        });
    }
    let th_ref = state.theta()[grid.slack];
    let th0: Vec<f64> = state.theta().iter().map(|t| t - th_ref).collect();
    let solution = solve(grid, state.p(), state.q(), state.v().to_vec(), th0, opts)?;
    let distance = solution.state.distance(state);
    Ok(Projection { solution, distance })
}
