//! Mixing diagnostics for the coded flow: Holder observables on the shift,
//! return time tails over excursion sets, correlation functions with
//! exponential envelope fits, Jacobian constancy of the symbolic transfer
//! maps and the excursion decomposition.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::coding::{encode_address, Alphabet};
use crate::error::{Error, Result};
use crate::gibbs::GeodesicSampler;
use crate::lattice::GraphOfGroups;
use crate::numeric::linear_fit;
use crate::thermo::{cone_orbit_sum, poincare_partial, Conductances, FirstStep};

/// Exact symbolic measure on letter words: the stationary law of the letter
/// chain whose transition weights are the crossing weight e^{c - s} times the
/// deck class multiplicity times the forward cone mass, i.e. the chain the
/// geodesic sampler follows. Word masses are pi(x_0) times the product of the
/// row-normalized transition probabilities.
///
/// The measure also carries the raw single-lift cylinder weights of the
/// quotient edge paths, used by the exact return time tail.
pub struct SymbolicMeasure<'a> {
    alphabet: &'a Alphabet,
    pi: Vec<f64>,
    trans: Vec<Vec<(usize, f64)>>,
    end: Vec<f64>,
    gibbs_start: Vec<f64>,
    gibbs_step: Vec<f64>,
}

impl<'a> SymbolicMeasure<'a> {
    pub fn new(
        gog: &GraphOfGroups,
        alphabet: &'a Alphabet,
        conds: &Conductances,
        s: f64,
        radius: usize,
    ) -> Result<Self> {
        let g = gog.graph();
        let rev = conds.reversed(gog);
        let q_fwd = poincare_partial(gog, conds, s, radius);
        let q_bwd = poincare_partial(gog, &rev, s, radius);
        if q_fwd <= 0.0 || q_bwd <= 0.0 {
            return Err(Error::DegenerateLattice("empty Poincare sum".into()));
        }
        // one cone sum per directed edge, shared by all letters on it
        let mut fwd_edge = vec![0.0; g.n_edges()];
        let mut bwd_edge = vec![0.0; g.n_edges()];
        for e in g.edges() {
            fwd_edge[e.0] = cone_orbit_sum(
                gog,
                conds,
                s,
                g.terminus(e),
                FirstStep::BanOneLift(g.opposite(e)),
                radius,
            );
            bwd_edge[e.0] = cone_orbit_sum(
                gog,
                &rev,
                s,
                g.origin(e),
                FirstStep::BanOneLift(e),
                radius,
            );
        }
        let n = alphabet.len();
        let mut step = vec![0.0; n];
        let mut end = vec![0.0; n];
        let mut gibbs_start = vec![0.0; n];
        let mut gibbs_step = vec![0.0; n];
        for i in 0..n {
            let l = alphabet.letter(i);
            // one crossing weight per deck class of lift continuations
            let mult = alphabet.orbit_multiplicity(i) as f64;
            step[i] = (conds.get(l.e_plus) - s).exp() * mult;
            // the quotient edge-path cylinder mass, split evenly over the
            // letters refining the pair so letter sums enumerate edge paths
            let refine = alphabet.refinement_count(i) as f64;
            gibbs_step[i] = (conds.get(l.e_plus) - s).exp() / refine;
            let arrive = bwd_edge[l.e_minus.0] / q_bwd * (conds.get(l.e_minus) - s).exp();
            gibbs_start[i] = arrive * gibbs_step[i];
            end[i] = fwd_edge[l.e_plus.0] / q_fwd;
        }
        // row-normalized chain: the conditional law of the next letter is
        // proportional to its step weight times its forward cone
        let mut trans: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for x in 0..n {
            let succ = alphabet.successors(x);
            let mut row: Vec<(usize, f64)> = succ
                .iter()
                .map(|&y| (y, step[y] * end[y]))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let z: f64 = row.iter().map(|&(_, w)| w).sum();
            if z > 0.0 {
                for r in &mut row {
                    r.1 /= z;
                }
            } else {
                row.clear();
            }
            trans.push(row);
        }
        let pi = stationary_law(&trans, n)?;
        Ok(Self {
            alphabet,
            pi,
            trans,
            end,
            gibbs_start,
            gibbs_step,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        self.alphabet
    }

    /// Stationary probability of reading the letter at time 0.
    pub fn letter_mass(&self, a: usize) -> f64 {
        self.pi[a]
    }

    /// Single-lift cylinder mass of the edge path under the letter, split
    /// over the letters refining its pair, matching the plain cylinder
    /// masses of the gibbs module.
    pub fn gibbs_letter_mass(&self, a: usize) -> f64 {
        self.gibbs_start[a] * self.end[a]
    }

    /// Total mass; the stationary law is a probability measure.
    pub fn total_mass(&self) -> f64 {
        self.pi.iter().sum()
    }

    /// Transition probability of the letter chain.
    pub fn transition(&self, x: usize, y: usize) -> f64 {
        self.trans[x]
            .iter()
            .find(|&&(b, _)| b == y)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// Probability of the cylinder of an admissible word.
    pub fn word_mass(&self, word: &[usize]) -> Result<f64> {
        if word.is_empty() {
            return Err(Error::BadParameter("empty letter word".into()));
        }
        for w in word.windows(2) {
            if !self.alphabet.admissible(w[0], w[1]) {
                return Err(Error::BadParameter("word is not admissible".into()));
            }
        }
        let mut m = self.pi[word[0]];
        for w in word.windows(2) {
            m *= self.transition(w[0], w[1]);
        }
        Ok(m)
    }
}

/// Stationary law of a row-stochastic chain by damped power iteration; the
/// half-lazy step removes the 2-periodicity of alternating climbs.
fn stationary_law(trans: &[Vec<(usize, f64)>], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::DegenerateLattice("empty alphabet".into()));
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for x in 0..n {
            if pi[x] == 0.0 {
                continue;
            }
            for &(y, p) in &trans[x] {
                next[y] += pi[x] * p;
            }
        }
        let z: f64 = next.iter().sum();
        if z <= 0.0 {
            return Err(Error::DegenerateLattice("measure has no mass".into()));
        }
        let mut diff = 0.0;
        for x in 0..n {
            let v = 0.5 * pi[x] + 0.5 * next[x] / z;
            diff += (v - pi[x]).abs();
            pi[x] = v;
        }
        if diff < 1e-14 {
            break;
        }
    }
    Ok(pi)
}

/// A Holder-continuous observable depending on finitely many coordinates:
/// a table over letter windows of length 2 depth + 1 centered at time 0,
/// read as 0 outside the table.
#[derive(Clone, Debug, Serialize)]
pub struct Observable {
    pub depth: usize,
    pub alpha: f64,
    pub table: HashMap<Vec<usize>, f64>,
}

impl Observable {
    pub fn new(depth: usize, alpha: f64, table: HashMap<Vec<usize>, f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::BadParameter("alpha must lie in (0, 1]".into()));
        }
        let w = 2 * depth + 1;
        if table.keys().any(|k| k.len() != w) {
            return Err(Error::BadParameter(format!(
                "table keys must be windows of length {w}"
            )));
        }
        Ok(Self {
            depth,
            alpha,
            table,
        })
    }

    /// The constant observable c, supported on every letter.
    pub fn constant(alphabet: &Alphabet, c: f64) -> Self {
        let table = (0..alphabet.len()).map(|a| (vec![a], c)).collect();
        Self {
            depth: 0,
            alpha: 1.0,
            table,
        }
    }

    /// Indicator of a single letter at time 0.
    pub fn indicator(letter: usize) -> Self {
        Self {
            depth: 0,
            alpha: 1.0,
            table: HashMap::from([(vec![letter], 1.0)]),
        }
    }

    /// Random values in [-1, 1] on every admissible window.
    pub fn random<R: Rng>(
        alphabet: &Alphabet,
        depth: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let table = admissible_words(alphabet, 2 * depth + 1)
            .into_iter()
            .map(|w| (w, rng.gen_range(-1.0..1.0)))
            .collect();
        Self::new(depth, alpha, table)
    }

    pub fn window_len(&self) -> usize {
        2 * self.depth + 1
    }

    pub fn eval(&self, window: &[usize]) -> f64 {
        self.table.get(window).copied().unwrap_or(0.0)
    }

    fn eval_at(&self, seq: &[usize], i: usize) -> Option<f64> {
        let k = self.depth;
        if i < k || i + k >= seq.len() {
            return None;
        }
        Some(self.eval(&seq[i - k..=i + k]))
    }

    pub fn sup_norm(&self) -> f64 {
        self.table.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact Holder norm on the finite table: the sup norm plus the largest
    /// quotient |phi(u) - phi(v)| / e^{-alpha n} over window pairs agreeing
    /// on coordinates [-n, n] with n < depth. Grouping by the central
    /// subword realizes every pair at its exact agreement radius.
    pub fn holder_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for n in 0..self.depth {
            let mut spread: HashMap<&[usize], (f64, f64)> = HashMap::new();
            for (w, &v) in &self.table {
                let mid = &w[self.depth - n..=self.depth + n];
                let e = spread.entry(mid).or_insert((v, v));
                e.0 = e.0.min(v);
                e.1 = e.1.max(v);
            }
            for (lo, hi) in spread.values() {
                best = best.max((hi - lo) * (self.alpha * n as f64).exp());
            }
        }
        self.sup_norm() + best
    }
}

/// Every admissible letter word of the given length.
pub fn admissible_words(alphabet: &Alphabet, len: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut words: Vec<Vec<usize>> = (0..alphabet.len()).map(|a| vec![a]).collect();
    for _ in 1..len {
        let mut next = Vec::new();
        for w in &words {
            for &b in alphabet.successors(*w.last().unwrap()) {
                let mut v = w.clone();
                v.push(b);
                next.push(v);
            }
        }
        words = next;
    }
    words
}

/// One entry of a diagnostic series; `error` is 0 for exact computations.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub value: f64,
    pub error: f64,
}

/// CSV emission shared by every series-valued diagnostic.
pub fn series_csv(points: &[SeriesPoint]) -> String {
    let mut out = String::from("n,value,error\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.n, p.value, p.error));
    }
    out
}

/// A sampled stationary letter sequence: a flow trajectory from the base
/// lift, encoded and with the burn-in prefix dropped.
pub fn sample_letters<R: Rng>(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    conds: &Conductances,
    s: f64,
    horizon: usize,
    len: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let sampler = GeodesicSampler::new(gog, conds, s, horizon);
    let steps = sampler.sample(len + burn_in + 1, rng)?;
    let mut letters = encode_address(gog, alphabet, &steps)?;
    letters.drain(..burn_in.min(letters.len()));
    Ok(letters)
}

/// Exact correlation of two depth-0 observables at gaps 0..=n_max, from the
/// joint cylinder masses of (letter at 0, letter at n).
pub fn correlation_exact(
    measure: &SymbolicMeasure,
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
) -> Result<Vec<SeriesPoint>> {
    if phi.depth != 0 || psi.depth != 0 {
        return Err(Error::BadParameter(
            "exact correlations need depth-0 observables".into(),
        ));
    }
    let alphabet = measure.alphabet;
    let l = alphabet.len();
    let pv: Vec<f64> = (0..l).map(|a| phi.eval(&[a])).collect();
    let sv: Vec<f64> = (0..l).map(|a| psi.eval(&[a])).collect();
    // per gap n: z = total joint mass, a = E psi(0), b = E phi(n), c = E joint
    let mut z = vec![0.0; n_max + 1];
    let mut ea = vec![0.0; n_max + 1];
    let mut eb = vec![0.0; n_max + 1];
    let mut ec = vec![0.0; n_max + 1];
    for a in 0..l {
        let mu = measure.letter_mass(a);
        if mu <= 0.0 {
            continue;
        }
        z[0] += mu;
        ea[0] += sv[a] * mu;
        eb[0] += pv[a] * mu;
        ec[0] += sv[a] * pv[a] * mu;
        // v[b] = mu * P(letter b at time n | letter a at time 0)
        let mut v = vec![0.0; l];
        v[a] = mu;
        for n in 1..=n_max {
            let mut next = vec![0.0; l];
            for x in 0..l {
                if v[x] == 0.0 {
                    continue;
                }
                for &(y, p) in &measure.trans[x] {
                    next[y] += v[x] * p;
                }
            }
            v = next;
            let mut t1 = 0.0;
            let mut tp = 0.0;
            for b in 0..l {
                t1 += v[b];
                tp += pv[b] * v[b];
            }
            z[n] += t1;
            ea[n] += sv[a] * t1;
            eb[n] += tp;
            ec[n] += sv[a] * tp;
        }
    }
    Ok((0..=n_max)
        .map(|n| {
            let value = if z[n] > 0.0 {
                ec[n] / z[n] - (ea[n] / z[n]) * (eb[n] / z[n])
            } else {
                0.0
            };
            SeriesPoint {
                n,
                value,
                error: 0.0,
            }
        })
        .collect())
}

/// Monte Carlo correlation over a letter sequence: time-average covariance
/// of phi shifted by n against psi, with batch-mean error bars.
pub fn correlation_mc(
    seq: &[usize],
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
    batches: usize,
) -> Result<Vec<SeriesPoint>> {
    let k = phi.depth.max(psi.depth);
    if seq.len() < 2 * k + n_max + batches.max(2) * 4 {
        return Err(Error::BadParameter("sequence too short".into()));
    }
    let pv: Vec<f64> = (0..seq.len())
        .map(|i| phi.eval_at(seq, i).unwrap_or(0.0))
        .collect();
    let sv: Vec<f64> = (0..seq.len())
        .map(|i| psi.eval_at(seq, i).unwrap_or(0.0))
        .collect();
    let lo = k;
    let hi_all = seq.len() - k;
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let hi = hi_all - n;
        let count = hi - lo;
        let mean_p: f64 = (lo..hi).map(|i| pv[i + n]).sum::<f64>() / count as f64;
        let mean_s: f64 = (lo..hi).map(|i| sv[i]).sum::<f64>() / count as f64;
        let b = batches.max(2);
        let mut batch_vals = Vec::with_capacity(b);
        let size = count / b;
        for j in 0..b {
            let a0 = lo + j * size;
            let a1 = if j + 1 == b { hi } else { a0 + size };
            let m: f64 = (a0..a1)
                .map(|i| (pv[i + n] - mean_p) * (sv[i] - mean_s))
                .sum::<f64>()
                / (a1 - a0) as f64;
            batch_vals.push(m);
        }
        let value = batch_vals.iter().sum::<f64>() / b as f64;
        let var = batch_vals
            .iter()
            .map(|x| (x - value) * (x - value))
            .sum::<f64>()
            / (b - 1) as f64;
        out.push(SeriesPoint {
            n,
            value,
            error: (var / b as f64).sqrt(),
        });
    }
    Ok(out)
}

/// Exact return time tail over an excursion set of letters: t(n) is the sum
/// of the single-lift cylinder masses of the words that read a letter of E at
/// time 0 and none at times 1 .. n-1, normalized by the single-lift letter
/// mass of the whole alphabet. Nonincreasing by construction: each step
/// subtracts the mass that returned.
pub fn return_time_tail_exact(
    measure: &SymbolicMeasure,
    letters_e: &[usize],
    n_max: usize,
) -> Result<Vec<SeriesPoint>> {
    if letters_e.is_empty() {
        return Err(Error::BadParameter("empty excursion set".into()));
    }
    let alphabet = measure.alphabet;
    let l = alphabet.len();
    let mut in_e = vec![false; l];
    for &a in letters_e {
        in_e[a] = true;
    }
    let total: f64 = (0..l).map(|a| measure.gibbs_letter_mass(a)).sum();
    let mut v = vec![0.0; l];
    let mut t1 = 0.0;
    for &a in letters_e {
        v[a] = measure.gibbs_start[a];
        t1 += measure.gibbs_letter_mass(a);
    }
    let mut t = t1 / total;
    let mut out = vec![SeriesPoint {
        n: 1,
        value: t,
        error: 0.0,
    }];
    for n in 2..=n_max {
        let mut next = vec![0.0; l];
        for x in 0..l {
            if v[x] == 0.0 {
                continue;
            }
            for &y in alphabet.successors(x) {
                if !in_e[y] {
                    next[y] += v[x] * measure.gibbs_step[y];
                }
            }
        }
        v = next;
        // mass of the length-n prefixes that have not yet returned; clamped
        // so cone truncation noise cannot break monotonicity
        let sum: f64 = (0..l).map(|x| v[x] * measure.end[x]).sum::<f64>() / total;
        t = sum.min(t);
        out.push(SeriesPoint {
            n,
            value: t,
            error: 0.0,
        });
    }
    Ok(out)
}

/// Monte Carlo return time tail: the empirical survival function of gaps
/// between consecutive visits to E along a sampled letter sequence.
pub fn return_time_tail_mc(
    seq: &[usize],
    letters_e: &[usize],
    n_max: usize,
) -> Result<Vec<SeriesPoint>> {
    let in_e: std::collections::HashSet<usize> = letters_e.iter().copied().collect();
    let visits: Vec<usize> = (0..seq.len()).filter(|i| in_e.contains(&seq[*i])).collect();
    if visits.len() < 2 {
        return Err(Error::BadParameter("fewer than two visits to E".into()));
    }
    let gaps: Vec<usize> = visits.windows(2).map(|w| w[1] - w[0]).collect();
    // share of time spent at E letters, the exact-mode t(1)
    let p_e = visits.len() as f64 / seq.len() as f64;
    let n_gaps = gaps.len() as f64;
    Ok((1..=n_max)
        .map(|n| {
            let p = gaps.iter().filter(|&&g| g >= n).count() as f64 / n_gaps;
            SeriesPoint {
                n,
                value: p_e * p,
                error: p_e * (p * (1.0 - p) / n_gaps).sqrt(),
            }
        })
        .collect())
}

/// An exponential rate fitted on the log of a positive series.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateFit {
    /// prefactor e^{intercept}
    pub c: f64,
    /// decay rate, the negated slope
    pub kappa: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Least-squares fit of log value against n over points with n >= n_min and
/// positive value. Requires at least 6 usable points.
pub fn exp_tail_fit(points: &[SeriesPoint], n_min: usize) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in points {
        if p.n >= n_min && p.value > 0.0 {
            xs.push(p.n as f64);
            ys.push(p.value.ln());
        }
    }
    if xs.len() < 6 {
        return Err(Error::BadParameter(format!(
            "only {} usable points for the tail fit",
            xs.len()
        )));
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Other("degenerate fit".into()))?;
    Ok(RateFit {
        c: fit.intercept.exp(),
        kappa: -fit.slope,
        r_squared: fit.r_squared,
        points_used: xs.len(),
    })
}

/// Envelope fit of a correlation series: exponential fit of |cov(n)|
/// normalized by the product of the Holder norms of the observables.
pub fn decay_rate_fit(
    cov: &[SeriesPoint],
    phi: &Observable,
    psi: &Observable,
    n_min: usize,
) -> Result<RateFit> {
    let norm = phi.holder_norm() * psi.holder_norm();
    if norm <= 0.0 {
        return Err(Error::BadParameter("observable of zero norm".into()));
    }
    let scaled: Vec<SeriesPoint> = cov
        .iter()
        .map(|p| SeriesPoint {
            n: p.n,
            value: p.value.abs() / norm,
            error: p.error / norm,
        })
        .collect();
    exp_tail_fit(&scaled, n_min)
}

/// Spread of the Jacobian of the transfer map f_w over a family of
/// continuations: ratios mass([w z]) / mass([w_n z]).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct JacobianReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub continuations: usize,
}

impl JacobianReport {
    pub fn spread(&self) -> f64 {
        self.max_ratio / self.min_ratio
    }
}

/// Jacobian constancy against an arbitrary mass oracle: the ratio of the
/// masses of [w z] and [w_n z] over every continuation z of length at most
/// cont_len. A word of length <= 1 has the identity transfer map.
pub fn jacobian_constancy_with(
    alphabet: &Alphabet,
    word: &[usize],
    cont_len: usize,
    mass: impl Fn(&[usize]) -> Result<f64>,
) -> Result<JacobianReport> {
    if word.len() <= 1 {
        return Ok(JacobianReport {
            min_ratio: 1.0,
            max_ratio: 1.0,
            continuations: 0,
        });
    }
    for w in word.windows(2) {
        if !alphabet.admissible(w[0], w[1]) {
            return Err(Error::BadParameter("word is not admissible".into()));
        }
    }
    let last = *word.last().unwrap();
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0;
    while let Some(z) = stack.pop() {
        let mut long = word.to_vec();
        long.extend_from_slice(&z);
        let mut short = vec![last];
        short.extend_from_slice(&z);
        let num = mass(&long)?;
        let den = mass(&short)?;
        if den > 0.0 {
            let r = num / den;
            lo = lo.min(r);
            hi = hi.max(r);
            count += 1;
        }
        if z.len() < cont_len {
            let from = *z.last().unwrap_or(&last);
            for &y in alphabet.successors(from) {
                let mut v = z.clone();
                v.push(y);
                stack.push(v);
            }
        }
    }
    if count == 0 {
        return Err(Error::Other("no continuation of positive mass".into()));
    }
    Ok(JacobianReport {
        min_ratio: lo,
        max_ratio: hi,
        continuations: count,
    })
}

/// Jacobian constancy under the symbolic measure.
pub fn jacobian_constancy_check(
    measure: &SymbolicMeasure,
    word: &[usize],
    cont_len: usize,
) -> Result<JacobianReport> {
    jacobian_constancy_with(measure.alphabet, word, cont_len, |w| measure.word_mass(w))
}

/// One excursion: a word starting and ending at letters of E with interior
/// outside E, its cylinder mass and the dilation e^L of the first-return map
/// on the shift metric, L the number of shifts.
#[derive(Clone, Debug, Serialize)]
pub struct Excursion {
    pub word: Vec<usize>,
    pub mass: f64,
    pub dilation: f64,
}

#[derive(Debug, Serialize)]
pub struct ExcursionDecomposition {
    pub letters_e: Vec<usize>,
    pub excursions: Vec<Excursion>,
    /// Worst relative gap per starting letter between its mass and the sum
    /// of its excursion masses plus the mass still outside E at the cap.
    pub partition_defect: f64,
    /// Mass of trajectories that have not returned within max_len letters.
    pub survivor_mass: f64,
}

/// Enumerate every excursion from E of at most max_len letters with its
/// mass, and audit that the excursions starting at each letter of E,
/// together with the survivors at the cap, partition that letter's mass.
pub fn excursion_decomposition(
    measure: &SymbolicMeasure,
    letters_e: &[usize],
    max_len: usize,
) -> Result<ExcursionDecomposition> {
    if letters_e.is_empty() || max_len < 2 {
        return Err(Error::BadParameter("need letters and max_len >= 2".into()));
    }
    let alphabet = measure.alphabet;
    let l = alphabet.len();
    let mut in_e = vec![false; l];
    for &a in letters_e {
        in_e[a] = true;
    }
    let mut excursions = Vec::new();
    let mut defect = 0.0f64;
    let mut survivor_total = 0.0;
    for &a in letters_e {
        let mu = measure.letter_mass(a);
        if mu <= 0.0 {
            continue;
        }
        let mut closed = 0.0;
        let mut stack: Vec<Vec<usize>> = vec![vec![a]];
        let mut survivors = 0.0;
        while let Some(w) = stack.pop() {
            for &y in alphabet.successors(*w.last().unwrap()) {
                let mut v = w.clone();
                v.push(y);
                if in_e[y] {
                    let mass = measure.word_mass(&v)?;
                    closed += mass;
                    excursions.push(Excursion {
                        dilation: ((v.len() - 1) as f64).exp(),
                        word: v,
                        mass,
                    });
                } else if v.len() < max_len {
                    stack.push(v);
                } else {
                    survivors += measure.word_mass(&v)?;
                }
            }
        }
        survivor_total += survivors;
        defect = defect.max(((closed + survivors - mu) / mu).abs());
    }
    excursions.sort_by(|a, b| a.word.cmp(&b.word));
    Ok(ExcursionDecomposition {
        letters_e: letters_e.to_vec(),
        excursions,
        partition_defect: defect,
        survivor_mass: survivor_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::DEFAULT_ENUM_CAP;
    use crate::coding::{build_alphabet, shift_distance};
    use crate::lattice::{modular_ray, quadratic_growth, rooted_tree_lattice, RootedTreeShape};
    use crate::thermo::critical_exponent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ray_setup(depth: usize, radius: usize) -> (GraphOfGroups, Conductances, f64, usize) {
        let gog = modular_ray(2, depth, DEFAULT_ENUM_CAP).unwrap();
        let conds = Conductances::zero(&gog);
        (gog, conds, (2.0f64).ln() + 0.02, radius)
    }

    #[test]
    fn holder_norm_hand_computed() {
        let table = HashMap::from([
            (vec![0, 1, 0], 1.0),
            (vec![0, 1, 2], 0.2),
            (vec![3, 2, 0], -0.5),
        ]);
        let phi = Observable::new(1, 0.5, table).unwrap();
        assert!((phi.sup_norm() - 1.0).abs() < 1e-12);
        // center 1: spread 0.8; center 2: spread 0; n = 0 so no alpha factor
        assert!((phi.holder_norm() - 1.8).abs() < 1e-12);
        let psi = Observable::new(0, 1.0, HashMap::from([(vec![7], -3.0)])).unwrap();
        assert!((psi.holder_norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn holder_norm_scales_with_alpha() {
        // words agreeing on the center but not at distance 1: n = 0 and
        // n = 1 groups both contribute; alpha weights the n = 1 spread
        let table = HashMap::from([
            (vec![0, 1, 2, 3, 4], 1.0),
            (vec![0, 1, 2, 3, 9], 0.0),
            (vec![9, 1, 2, 3, 4], 0.5),
        ]);
        let phi = Observable::new(2, 1.0, table).unwrap();
        // pair (1st, 2nd) agrees on [-1, 1]: spread 1.0 at n = 1, factor e
        assert!((phi.holder_norm() - (1.0 + 1.0 * 1.0f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn random_observable_covers_admissible_windows() {
        let (gog, ..) = ray_setup(5, 4);
        let alphabet = build_alphabet(&gog).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = Observable::random(&alphabet, 1, 0.5, &mut rng).unwrap();
        assert_eq!(phi.table.len(), admissible_words(&alphabet, 3).len());
        assert!(phi.table.values().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn letter_masses_positive_and_consistent() {
        let (gog, conds, s, radius) = ray_setup(40, 36);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let total: f64 = (0..alphabet.len()).map(|a| m.letter_mass(a)).sum();
        assert!((total - m.total_mass()).abs() < 1e-12 * total);
        // every letter of the bulk is charged
        for a in 0..alphabet.len() {
            assert!(m.letter_mass(a) >= 0.0);
        }
    }

    #[test]
    fn return_tail_is_monotone_and_starts_at_event_mass() {
        let (gog, conds, s, radius) = ray_setup(40, 36);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let v0 = gog.graph().vertex_by_name("v0").unwrap();
        let letters_e = alphabet.window(&gog, &[v0]);
        let tail = return_time_tail_exact(&m, &letters_e, 24).unwrap();
        let gibbs_total: f64 = (0..alphabet.len()).map(|a| m.gibbs_letter_mass(a)).sum();
        let expect: f64 =
            letters_e.iter().map(|&a| m.gibbs_letter_mass(a)).sum::<f64>() / gibbs_total;
        assert!((tail[0].value - expect).abs() < 1e-12);
        for w in tail.windows(2) {
            assert!(w[1].value <= w[0].value + 1e-15);
        }
        // single-lift masses decay by e^{-s} per letter along the forced climb
        let fit = exp_tail_fit(&tail, 3).unwrap();
        assert!(fit.kappa > 0.4 && fit.kappa < 1.0, "kappa = {}", fit.kappa);
        assert!(fit.r_squared > 0.9, "r2 = {}", fit.r_squared);
    }

    #[test]
    fn excursions_by_height_match_hand_enumeration() {
        let (gog, conds, s, radius) = ray_setup(10, 9);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let v0 = gog.graph().vertex_by_name("v0").unwrap();
        let letters_e = alphabet.window(&gog, &[v0]);
        assert_eq!(letters_e.len(), 2);
        let dec = excursion_decomposition(&m, &letters_e, 9).unwrap();
        // a spike of height h reads 2h + 1 letters: the climb and descent are
        // forced, the top turn is unique, and both endpoints come in 2 classes
        for h in 1..=4usize {
            let of_height: Vec<&Excursion> = dec
                .excursions
                .iter()
                .filter(|e| e.word.len() == 2 * h + 1)
                .collect();
            assert_eq!(of_height.len(), 4, "height {h}");
            for e in &of_height {
                assert!((e.dilation - ((2 * h) as f64).exp()).abs() < 1e-9);
            }
        }
        assert_eq!(dec.excursions.len(), 16);
        // mass per height drops by q e^{-2s} per level
        let mass_at = |h: usize| -> f64 {
            dec.excursions
                .iter()
                .filter(|e| e.word.len() == 2 * h + 1)
                .map(|e| e.mass)
                .sum()
        };
        // the 1/q ascent rule up to boundary corrections at v0 and the cap
        let expected = 2.0 * (-2.0 * s).exp();
        for h in 1..=3usize {
            let r = mass_at(h + 1) / mass_at(h);
            assert!(
                (r - expected).abs() < 0.25 * expected,
                "ratio {r} at height {h}"
            );
        }
        assert!(dec.partition_defect < 0.2, "defect {}", dec.partition_defect);
    }

    #[test]
    fn excursion_dilation_matches_shift_metric() {
        // the first-return map on an excursion of L shifts scales the
        // symbolic distance of deeper refinements by exactly e^L
        let x = vec![5, 1, 2, 3, 7, 7, 7];
        let y = vec![5, 1, 2, 3, 7, 7, 9];
        let l = 4;
        let d0 = shift_distance(&x, &y);
        let d1 = shift_distance(&x[l..], &y[l..]);
        assert!((d1 / d0 - (l as f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn constant_observable_has_zero_correlation() {
        let (gog, conds, s, radius) = ray_setup(24, 20);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let phi = Observable::constant(&alphabet, 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = Observable::random(&alphabet, 0, 1.0, &mut rng).unwrap();
        for p in correlation_exact(&m, &phi, &psi, 12).unwrap() {
            assert!(p.value.abs() < 1e-10, "cov({}) = {}", p.n, p.value);
        }
    }

    #[test]
    fn autocovariance_at_zero_is_a_variance() {
        let (gog, conds, s, radius) = ray_setup(24, 20);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = Observable::random(&alphabet, 0, 1.0, &mut rng).unwrap();
        let cov = correlation_exact(&m, &phi, &phi, 2).unwrap();
        assert!(cov[0].value >= 0.0);
    }

    #[test]
    fn indicator_correlation_decays_on_gcd_one_example() {
        // the ray chain is 2-periodic, so even-gap covariances converge to
        // the parity bias instead of zero; decay needs the gcd = 1 example
        let gog = quadratic_growth(2, 5, DEFAULT_ENUM_CAP).unwrap();
        let conds = Conductances::zero(&gog);
        let s = critical_exponent(&gog, &conds, 10).unwrap().delta + 0.2;
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, 10).unwrap();
        let a = (0..alphabet.len())
            .max_by(|&x, &y| m.letter_mass(x).total_cmp(&m.letter_mass(y)))
            .unwrap();
        let phi = Observable::indicator(a);
        let cov = correlation_exact(&m, &phi, &phi, 20).unwrap();
        let fit = decay_rate_fit(&cov, &phi, &phi, 2).unwrap();
        assert!(fit.kappa > 0.05, "kappa = {}", fit.kappa);
        assert!(cov[20].value.abs() < cov[2].value.abs());
    }

    #[test]
    fn mc_statistics_match_exact_mode() {
        let (gog, conds, s, radius) = ray_setup(60, 55);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let seq = sample_letters(&gog, &alphabet, &conds, s, 55, 150_000, 2_000, &mut rng)
            .unwrap();
        let v0 = gog.graph().vertex_by_name("v0").unwrap();
        let letters_e = alphabet.window(&gog, &[v0]);
        let phi = Observable::indicator(letters_e[0]);
        let psi = Observable::indicator(letters_e[1]);
        let exact = correlation_exact(&m, &phi, &psi, 4).unwrap();
        let mc = correlation_mc(&seq, &phi, &psi, 4, 20).unwrap();
        for (e, p) in exact.iter().zip(&mc) {
            let tol = 4.0 * p.error + 3e-3;
            assert!(
                (e.value - p.value).abs() < tol,
                "gap {}: exact {} mc {} +- {}",
                p.n,
                e.value,
                p.value,
                p.error
            );
        }
        // the empirical visit frequency of E matches the deck-class measure
        let tail_mc = return_time_tail_mc(&seq, &letters_e, 8).unwrap();
        let p_e: f64 = letters_e.iter().map(|&a| m.letter_mass(a)).sum::<f64>() / m.total_mass();
        assert!(
            (tail_mc[0].value - p_e).abs() < 0.02,
            "occupancy: exact {} mc {}",
            p_e,
            tail_mc[0].value
        );
    }

    #[test]
    fn iid_control_has_no_correlation_beyond_support() {
        // independent uniform letters: windows at gap n > 2 depth are
        // disjoint, so the covariance vanishes in expectation
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let seq: Vec<usize> = (0..200_000).map(|_| rng.gen_range(0..6)).collect();
        let mut table_p = HashMap::new();
        let mut table_s = HashMap::new();
        for a in 0..6 {
            for b in 0..6 {
                for c in 0..6 {
                    table_p.insert(vec![a, b, c], rng.gen_range(-1.0..1.0));
                    table_s.insert(vec![a, b, c], rng.gen_range(-1.0..1.0));
                }
            }
        }
        let phi = Observable::new(1, 1.0, table_p).unwrap();
        let psi = Observable::new(1, 1.0, table_s).unwrap();
        let cov = correlation_mc(&seq, &phi, &psi, 8, 20).unwrap();
        for p in cov.iter().filter(|p| p.n > 2) {
            assert!(
                p.value.abs() < 5.0 * p.error + 1e-3,
                "gap {}: {} +- {}",
                p.n,
                p.value,
                p.error
            );
        }
    }

    #[test]
    fn exp_tail_fit_recovers_synthetic_rate() {
        let pts: Vec<SeriesPoint> = (1..=20)
            .map(|n| SeriesPoint {
                n,
                value: 0.7 * (-0.3 * n as f64).exp(),
                error: 0.0,
            })
            .collect();
        let fit = exp_tail_fit(&pts, 3).unwrap();
        assert!((fit.kappa - 0.3).abs() < 1e-9);
        assert!((fit.c - 0.7).abs() < 1e-9);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn exp_tail_fit_needs_six_points() {
        let pts: Vec<SeriesPoint> = (1..=5)
            .map(|n| SeriesPoint {
                n,
                value: (-(n as f64)).exp(),
                error: 0.0,
            })
            .collect();
        assert!(exp_tail_fit(&pts, 1).is_err());
    }

    #[test]
    fn jacobian_is_constant_and_detects_perturbation() {
        let (gog, conds, s, radius) = ray_setup(12, 10);
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, radius).unwrap();
        let word = admissible_words(&alphabet, 4)
            .into_iter()
            .find(|w| m.word_mass(w).unwrap() > 0.0)
            .unwrap();
        let rep = jacobian_constancy_check(&m, &word, 3).unwrap();
        assert!(rep.continuations > 4);
        assert!((rep.spread() - 1.0).abs() < 1e-9, "spread {}", rep.spread());
        // the identity transfer map
        let trivial = jacobian_constancy_check(&m, &word[..1], 3).unwrap();
        assert!((trivial.spread() - 1.0).abs() == 0.0);
        // a length-dependent perturbation of the masses must be flagged
        let bad = jacobian_constancy_with(&alphabet, &word, 3, |w| {
            Ok(m.word_mass(w)? * (1.0 + 0.05 * (w.len() % 2) as f64))
        })
        .unwrap();
        assert!(bad.spread() > 1.01, "spread {}", bad.spread());
    }

    #[test]
    fn rooted_tree_return_tail_has_the_volume_rate() {
        let gog = rooted_tree_lattice(RootedTreeShape::uniform(2), 8, 8, DEFAULT_ENUM_CAP)
            .unwrap();
        let conds = Conductances::zero(&gog);
        let delta = critical_exponent(&gog, &conds, 14).unwrap().delta;
        let s = delta + 0.02;
        let alphabet = build_alphabet(&gog).unwrap();
        let m = SymbolicMeasure::new(&gog, &alphabet, &conds, s, 15).unwrap();
        let root = gog.graph().vertex_by_name("t0").unwrap();
        let letters_e = alphabet.window(&gog, &[root]);
        assert!(!letters_e.is_empty());
        let tail = return_time_tail_exact(&m, &letters_e, 14).unwrap();
        let fit = exp_tail_fit(&tail, 3).unwrap();
        // depth d costs 2d letters at weight e^{-s} each against 2^d branches:
        // the rate per letter sits near (ln 8) / 2 and clears 1/2 comfortably
        assert!(
            fit.kappa >= 0.5 && fit.kappa < 2.0,
            "kappa = {}",
            fit.kappa
        );
        assert!(fit.r_squared >= 0.95, "r2 = {}", fit.r_squared);
    }

    #[test]
    fn series_csv_shape() {
        let pts = vec![
            SeriesPoint {
                n: 1,
                value: 0.5,
                error: 0.0,
            },
            SeriesPoint {
                n: 2,
                value: 0.25,
                error: 0.01,
            },
        ];
        let csv = series_csv(&pts);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("n,value,error"));
        assert_eq!(lines.next(), Some("1,0.5,0"));
        assert_eq!(lines.next(), Some("2,0.25,0.01"));
    }
}
