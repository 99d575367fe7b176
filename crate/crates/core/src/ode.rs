//! Adaptive Dormand–Prince 8(5,3) integrator with 7th-order dense output.
//!
//! The step-size controller and the dense-output construction follow
//! Hairer's DOP853. Samples are emitted on a caller-supplied time grid by
//! evaluating the continuous extension inside each accepted step, so the
//! grid never constrains the step sequence.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// A first-order system `y' = f(t, y)` over real state vectors.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct Dop853 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on |h|; `f64::INFINITY` leaves it unconstrained.
    pub h_max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl Dop853 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            max_steps: 5_000_000,
            h_max: f64::INFINITY,
        }
    }

    /// Integrate from `(t0, y0)` through every time in `samples` (ascending,
    /// all `>= t0`). `on_sample` receives each sample time and state.
    pub fn integrate<S, F>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        samples: &[f64],
        mut on_sample: F,
    ) -> Result<IntegrationStats>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64]) -> Result<()>,
    {
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y0.len(),
            });
        }
        if !(self.rtol > 0.0 && self.atol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerances must be positive (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        if samples.windows(2).any(|w| w[1] < w[0]) || samples.first().is_some_and(|&s| s < t0) {
            return Err(Error::InvalidParameter(
                "sample times must be ascending and not before t0".into(),
            ));
        }
        let mut stats = IntegrationStats::default();
        let mut next = 0usize;
        while next < samples.len() && samples[next] == t0 {
            on_sample(t0, y0)?;
            next += 1;
        }
        let Some(&t_end) = samples.last() else {
            return Ok(stats);
        };
        if next == samples.len() {
            return Ok(stats);
        }

        let mut work = Workspace::new(n);
        let mut t = t0;
        work.y.copy_from_slice(y0);
        sys.rhs(t, &work.y, &mut work.k[0]);
        stats.rhs_evals += 1;
        let mut h = self.initial_step(sys, t, t_end, &mut work, &mut stats);
        let mut rejected_last = false;

        while next < samples.len() {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::TooManySteps {
                    t,
                    steps: self.max_steps,
                });
            }
            let min_step = 10.0 * (next_up(t.abs()) - t.abs());
            if h < min_step {
                return Err(Error::StepSizeUnderflow { t });
            }
            h = h.min(self.h_max);
            let mut t_new = t + h;
            if t_new > t_end {
                t_new = t_end;
            }
            let h_step = t_new - t;

            self.stages(sys, t, h_step, &mut work);
            stats.rhs_evals += 11;
            let err = self.error_norm(h_step, &mut work);
            if !err.is_finite() {
                h = h_step * MIN_FACTOR;
                stats.rejected += 1;
                rejected_last = true;
                continue;
            }
            if err < 1.0 {
                // Accepted: k[12] already holds f(t_new, y_new).
                stats.accepted += 1;
                let mut dense_ready = false;
                while next < samples.len() && samples[next] <= t_new {
                    let ts = samples[next];
                    if ts == t_new {
                        on_sample(ts, &work.y_new)?;
                    } else {
                        if !dense_ready {
                            self.dense_coefficients(sys, t, h_step, &mut work);
                            stats.rhs_evals += 3;
                            dense_ready = true;
                        }
                        let x = (ts - t) / h_step;
                        work.interpolate(x);
                        on_sample(ts, &work.dense)?;
                    }
                    next += 1;
                }
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-1.0 / 8.0)).min(MAX_FACTOR)
                };
                if rejected_last {
                    factor = factor.min(1.0);
                }
                rejected_last = false;
                t = t_new;
                std::mem::swap(&mut work.y, &mut work.y_new);
                let (first, rest) = work.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[11]);
                h = h_step * factor;
            } else {
                stats.rejected += 1;
                rejected_last = true;
                h = h_step * (SAFETY * err.powf(-1.0 / 8.0)).max(MIN_FACTOR);
            }
        }
        Ok(stats)
    }

    fn initial_step<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t: f64,
        t_end: f64,
        work: &mut Workspace,
        stats: &mut IntegrationStats,
    ) -> f64 {
        let n = work.y.len();
        let span = (t_end - t).abs();
        let scale = |v: f64| self.atol + v.abs() * self.rtol;
        let rms = |f: &dyn Fn(usize) -> f64| -> f64 {
            ((0..n).map(|i| f(i).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = rms(&|i| work.y[i] / scale(work.y[i]));
        let d1 = rms(&|i| work.k[0][i] / scale(work.y[i]));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
        .min(span);
        for i in 0..n {
            work.tmp[i] = work.y[i] + h0 * work.k[0][i];
        }
        sys.rhs(t + h0, &work.tmp, &mut work.k[1]);
        stats.rhs_evals += 1;
        let d2 = rms(&|i| (work.k[1][i] - work.k[0][i]) / scale(work.y[i])) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(span).min(self.h_max)
    }

    fn stages<S: OdeSystem + ?Sized>(&self, sys: &S, t: f64, h: f64, work: &mut Workspace) {
        for s in 1..N_STAGES {
            combine(&mut work.tmp, &work.y, h, &A[s][..s], &work.k);
            let (_, rest) = work.k.split_at_mut(s);
            sys.rhs(t + C[s] * h, &work.tmp, &mut rest[0]);
        }
        combine(&mut work.y_new, &work.y, h, &B, &work.k);
        let (_, rest) = work.k.split_at_mut(N_STAGES);
        sys.rhs(t + h, &work.y_new, &mut rest[0]);
    }

    fn error_norm(&self, h: f64, work: &mut Workspace) -> f64 {
        let n = work.y.len();
        linear_combination(&mut work.err5, &E5, &work.k);
        linear_combination(&mut work.err3, &E3, &work.k);
        let mut e5 = 0.0;
        let mut e3 = 0.0;
        for i in 0..n {
            let sc = self.atol + work.y[i].abs().max(work.y_new[i].abs()) * self.rtol;
            e5 += (work.err5[i] / sc).powi(2);
            e3 += (work.err3[i] / sc).powi(2);
        }
        if e5 == 0.0 && e3 == 0.0 {
            return 0.0;
        }
        let denom = e5 + 0.01 * e3;
        h.abs() * e5 / (denom * n as f64).sqrt()
    }

    fn dense_coefficients<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t: f64,
        h: f64,
        work: &mut Workspace,
    ) {
        let n = work.y.len();
        for (e, s) in (N_STAGES + 1..N_STAGES_EXTENDED).enumerate() {
            combine(&mut work.tmp, &work.y, h, &A_EXTRA[e][..s], &work.k);
            let (_, rest) = work.k.split_at_mut(s);
            sys.rhs(t + C_EXTRA[e] * h, &work.tmp, &mut rest[0]);
        }
        for (r, drow) in D.iter().enumerate() {
            linear_combination(&mut work.f[3 + r], drow, &work.k);
        }
        for i in 0..n {
            let dy = work.y_new[i] - work.y[i];
            let f_old = work.k[0][i];
            let f_new = work.k[N_STAGES][i];
            work.f[0][i] = dy;
            work.f[1][i] = h * f_old - dy;
            work.f[2][i] = 2.0 * dy - h * (f_new + f_old);
            for r in 3..INTERPOLATOR_POWER {
                work.f[r][i] *= h;
            }
        }
    }
}

const CHUNK: usize = 512;

/// `out = base + h Σ_j coeffs[j] k[j]`, blocked so each chunk stays in cache.
fn combine(out: &mut [f64], base: &[f64], h: f64, coeffs: &[f64], k: &[Vec<f64>]) {
    let terms: Vec<(f64, &[f64])> = coeffs
        .iter()
        .zip(k)
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, kj)| (h * c, kj.as_slice()))
        .collect();
    for start in (0..out.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(out.len());
        let o = &mut out[start..end];
        o.copy_from_slice(&base[start..end]);
        for (c, kj) in &terms {
            for (oi, ki) in o.iter_mut().zip(&kj[start..end]) {
                *oi += c * ki;
            }
        }
    }
}

/// `out = Σ_j coeffs[j] k[j]`.
fn linear_combination(out: &mut [f64], coeffs: &[f64], k: &[Vec<f64>]) {
    let terms: Vec<(f64, &[f64])> = coeffs
        .iter()
        .zip(k)
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, kj)| (*c, kj.as_slice()))
        .collect();
    for start in (0..out.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(out.len());
        let o = &mut out[start..end];
        o.iter_mut().for_each(|v| *v = 0.0);
        for (c, kj) in &terms {
            for (oi, ki) in o.iter_mut().zip(&kj[start..end]) {
                *oi += c * ki;
            }
        }
    }
}

struct Workspace {
    y: Vec<f64>,
    y_new: Vec<f64>,
    tmp: Vec<f64>,
    dense: Vec<f64>,
    err5: Vec<f64>,
    err3: Vec<f64>,
    k: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            y: vec![0.0; n],
            y_new: vec![0.0; n],
            tmp: vec![0.0; n],
            dense: vec![0.0; n],
            err5: vec![0.0; n],
            err3: vec![0.0; n],
            k: vec![vec![0.0; n]; N_STAGES_EXTENDED],
            f: vec![vec![0.0; n]; INTERPOLATOR_POWER],
        }
    }

    /// Evaluate the continuous extension at x = (t - t_old)/h in [0, 1].
    fn interpolate(&mut self, x: f64) {
        let y1 = 1.0 - x;
        for i in 0..self.y.len() {
            let f = |r: usize| self.f[r][i];
            let inner = f(5) + x * f(6);
            let inner = f(4) + y1 * inner;
            let inner = f(3) + x * inner;
            let inner = f(2) + y1 * inner;
            let inner = f(1) + x * inner;
            let inner = f(0) + y1 * inner;
            self.dense[i] = self.y[i] + x * inner;
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

const N_STAGES: usize = 12;
const N_STAGES_EXTENDED: usize = 16;
const INTERPOLATOR_POWER: usize = 7;

const C: [f64; N_STAGES] = [
    0.0,
    0.526001519587677318785587544488e-01,
    0.789002279381515978178381316732e-01,
    0.118350341907227396726757197510,
    0.281649658092772603273242802490,
    0.333333333333333333333333333333,
    0.25,
    0.307692307692307692307692307692,
    0.651282051282051282051282051282,
    0.6,
    0.857142857142857142857142857142,
    1.0,
];

const C_EXTRA: [f64; 3] = [0.1, 0.2, 0.777777777777777777777777777778];

const A: [[f64; N_STAGES]; N_STAGES] = {
    let mut a = [[0.0; N_STAGES]; N_STAGES];
    a[1][0] = 5.26001519587677318785587544488e-2;

    a[2][0] = 1.97250569845378994544595329183e-2;
    a[2][1] = 5.91751709536136983633785987549e-2;

    a[3][0] = 2.95875854768068491816892993775e-2;
    a[3][2] = 8.87627564304205475450678981324e-2;

    a[4][0] = 2.41365134159266685502369798665e-1;
    a[4][2] = -8.84549479328286085344864962717e-1;
    a[4][3] = 9.24834003261792003115737966543e-1;

    a[5][0] = 3.7037037037037037037037037037e-2;
    a[5][3] = 1.70828608729473871279604482173e-1;
    a[5][4] = 1.25467687566822425016691814123e-1;

    a[6][0] = 3.7109375e-2;
    a[6][3] = 1.70252211019544039314978060272e-1;
    a[6][4] = 6.02165389804559606850219397283e-2;
    a[6][5] = -1.7578125e-2;

    a[7][0] = 3.70920001185047927108779319836e-2;
    a[7][3] = 1.70383925712239993810214054705e-1;
    a[7][4] = 1.07262030446373284651809199168e-1;
    a[7][5] = -1.53194377486244017527936158236e-2;
    a[7][6] = 8.27378916381402288758473766002e-3;

    a[8][0] = 6.24110958716075717114429577812e-1;
    a[8][3] = -3.36089262944694129406857109825;
    a[8][4] = -8.68219346841726006818189891453e-1;
    a[8][5] = 2.75920996994467083049415600797e1;
    a[8][6] = 2.01540675504778934086186788979e1;
    a[8][7] = -4.34898841810699588477366255144e1;

    a[9][0] = 4.77662536438264365890433908527e-1;
    a[9][3] = -2.48811461997166764192642586468;
    a[9][4] = -5.90290826836842996371446475743e-1;
    a[9][5] = 2.12300514481811942347288949897e1;
    a[9][6] = 1.52792336328824235832596922938e1;
    a[9][7] = -3.32882109689848629194453265587e1;
    a[9][8] = -2.03312017085086261358222928593e-2;

    a[10][0] = -9.3714243008598732571704021658e-1;
    a[10][3] = 5.18637242884406370830023853209;
    a[10][4] = 1.09143734899672957818500254654;
    a[10][5] = -8.14978701074692612513997267357;
    a[10][6] = -1.85200656599969598641566180701e1;
    a[10][7] = 2.27394870993505042818970056734e1;
    a[10][8] = 2.49360555267965238987089396762;
    a[10][9] = -3.0467644718982195003823669022;

    a[11][0] = 2.27331014751653820792359768449;
    a[11][3] = -1.05344954667372501984066689879e1;
    a[11][4] = -2.00087205822486249909675718444;
    a[11][5] = -1.79589318631187989172765950534e1;
    a[11][6] = 2.79488845294199600508499808837e1;
    a[11][7] = -2.85899827713502369474065508674;
    a[11][8] = -8.87285693353062954433549289258;
    a[11][9] = 1.23605671757943030647266201528e1;
    a[11][10] = 6.43392746015763530355970484046e-1;
    a
};

const B: [f64; N_STAGES] = [
    5.42937341165687622380535766363e-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566,
    1.89151789931450038304281599044,
    -5.8012039600105847814672114227,
    3.1116436695781989440891606237e-1,
    -1.52160949662516078556178806805e-1,
    2.01365400804030348374776537501e-1,
    4.47106157277725905176885569043e-2,
];

const A_EXTRA: [[f64; N_STAGES_EXTENDED]; 3] = {
    let mut a = [[0.0; N_STAGES_EXTENDED]; 3];
    a[0][0] = 5.61675022830479523392909219681e-2;
    a[0][6] = 2.53500210216624811088794765333e-1;
    a[0][7] = -2.46239037470802489917441475441e-1;
    a[0][8] = -1.24191423263816360469010140626e-1;
    a[0][9] = 1.5329179827876569731206322685e-1;
    a[0][10] = 8.20105229563468988491666602057e-3;
    a[0][11] = 7.56789766054569976138603589584e-3;
    a[0][12] = -8.298e-3;

    a[1][0] = 3.18346481635021405060768473261e-2;
    a[1][5] = 2.83009096723667755288322961402e-2;
    a[1][6] = 5.35419883074385676223797384372e-2;
    a[1][7] = -5.49237485713909884646569340306e-2;
    a[1][10] = -1.08347328697249322858509316994e-4;
    a[1][11] = 3.82571090835658412954920192323e-4;
    a[1][12] = -3.40465008687404560802977114492e-4;
    a[1][13] = 1.41312443674632500278074618366e-1;

    a[2][0] = -4.28896301583791923408573538692e-1;
    a[2][5] = -4.69762141536116384314449447206;
    a[2][6] = 7.68342119606259904184240953878;
    a[2][7] = 4.06898981839711007970213554331;
    a[2][8] = 3.56727187455281109270669543021e-1;
    a[2][12] = -1.39902416515901462129418009734e-3;
    a[2][13] = 2.9475147891527723389556272149;
    a[2][14] = -9.15095847217987001081870187138;
    a
};

const E3: [f64; N_STAGES + 1] = {
    let mut e = [0.0; N_STAGES + 1];
    let mut i = 0;
    while i < N_STAGES {
        e[i] = B[i];
        i += 1;
    }
    e[0] -= 0.244094488188976377952755905512;
    e[8] -= 0.733846688281611857341361741547;
    e[11] -= 0.220588235294117647058823529412e-1;
    e
};

const E5: [f64; N_STAGES + 1] = {
    let mut e = [0.0; N_STAGES + 1];
    e[0] = 0.1312004499419488073250102996e-1;
    e[5] = -0.1225156446376204440720569753e+1;
    e[6] = -0.4957589496572501915214079952;
    e[7] = 0.1664377182454986536961530415e+1;
    e[8] = -0.3503288487499736816886487290;
    e[9] = 0.3341791187130174790297318841;
    e[10] = 0.8192320648511571246570742613e-1;
    e[11] = -0.2235530786388629525884427845e-1;
    e
};

const D: [[f64; N_STAGES_EXTENDED]; INTERPOLATOR_POWER - 3] = {
    let mut d = [[0.0; N_STAGES_EXTENDED]; INTERPOLATOR_POWER - 3];
    d[0][0] = -0.84289382761090128651353491142e+1;
    d[0][5] = 0.56671495351937776962531783590;
    d[0][6] = -0.30689499459498916912797304727e+1;
    d[0][7] = 0.23846676565120698287728149680e+1;
    d[0][8] = 0.21170345824450282767155149946e+1;
    d[0][9] = -0.87139158377797299206789907490;
    d[0][10] = 0.22404374302607882758541771650e+1;
    d[0][11] = 0.63157877876946881815570249290;
    d[0][12] = -0.88990336451333310820698117400e-1;
    d[0][13] = 0.18148505520854727256656404962e+2;
    d[0][14] = -0.91946323924783554000451984436e+1;
    d[0][15] = -0.44360363875948939664310572000e+1;

    d[1][0] = 0.10427508642579134603413151009e+2;
    d[1][5] = 0.24228349177525818288430175319e+3;
    d[1][6] = 0.16520045171727028198505394887e+3;
    d[1][7] = -0.37454675472269020279518312152e+3;
    d[1][8] = -0.22113666853125306036270938578e+2;
    d[1][9] = 0.77334326684722638389603898808e+1;
    d[1][10] = -0.30674084731089398182061213626e+2;
    d[1][11] = -0.93321305264302278729567221706e+1;
    d[1][12] = 0.15697238121770843886131091075e+2;
    d[1][13] = -0.31139403219565177677282850411e+2;
    d[1][14] = -0.93529243588444783865713862664e+1;
    d[1][15] = 0.35816841486394083752465898540e+2;

    d[2][0] = 0.19985053242002433820987653617e+2;
    d[2][5] = -0.38703730874935176555105901742e+3;
    d[2][6] = -0.18917813819516756882830838328e+3;
    d[2][7] = 0.52780815920542364900561016686e+3;
    d[2][8] = -0.11573902539959630126141871134e+2;
    d[2][9] = 0.68812326946963000169666922661e+1;
    d[2][10] = -0.10006050966910838403183860980e+1;
    d[2][11] = 0.77771377980534432092869265740;
    d[2][12] = -0.27782057523535084065932004339e+1;
    d[2][13] = -0.60196695231264120758267380846e+2;
    d[2][14] = 0.84320405506677161018159903784e+2;
    d[2][15] = 0.11992291136182789328035130030e+2;

    d[3][0] = -0.25693933462703749003312586129e+2;
    d[3][5] = -0.15418974869023643374053993627e+3;
    d[3][6] = -0.23152937917604549567536039109e+3;
    d[3][7] = 0.35763911791061412378285349910e+3;
    d[3][8] = 0.93405324183624310003907691704e+2;
    d[3][9] = -0.37458323136451633156875139351e+2;
    d[3][10] = 0.10409964950896230045147246184e+3;
    d[3][11] = 0.29840293426660503123344363579e+2;
    d[3][12] = -0.43533456590011143754432175058e+2;
    d[3][13] = 0.96324553959188282948394950600e+2;
    d[3][14] = -0.39177261675615439165231486172e+2;
    d[3][15] = -0.14972683625798562581422125276e+3;
    d
};
