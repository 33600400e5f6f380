//! Gibbs measures of cylinders of the discrete geodesic flow and a seeded
//! sampler of flow trajectories driven by conditional cylinder masses.

use rand::Rng;
use serde::Serialize;

use crate::algebra::Int;
use crate::cover::{Cover, CoverVertex, Step};
use crate::error::{Error, Result};
use crate::lattice::{EdgeId, GraphOfGroups, VertexId};
use crate::numeric::{linear_fit, LineFit};
use crate::thermo::{
    cone_orbit_sum, path_stabilizer_order, poincare_partial, Conductances, FirstStep,
};

/// A cylinder of the geodesic flow on the quotient: trajectories whose
/// positions at times 0..=len trace a lift of this quotient edge word.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CylinderSpec {
    pub start: VertexId,
    pub edges: Vec<EdgeId>,
}

impl CylinderSpec {
    pub fn new(gog: &GraphOfGroups, start: VertexId, edges: Vec<EdgeId>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::BadParameter("cylinder needs at least one edge".into()));
        }
        let g = gog.graph();
        let mut at = start;
        for &e in &edges {
            if g.origin(e) != at {
                return Err(Error::BadParameter("cylinder edges are not a path".into()));
            }
            at = g.terminus(e);
        }
        Ok(Self { start, edges })
    }

    /// Project a cover geodesic segment to its quotient cylinder.
    pub fn from_cover_path(gog: &GraphOfGroups, path: &[CoverVertex]) -> Result<Self> {
        if path.len() < 2 {
            return Err(Error::BadParameter("cylinder needs at least one edge".into()));
        }
        let g = gog.graph();
        let cover = Cover::new(gog);
        let mut edges = Vec::with_capacity(path.len() - 1);
        for w in path.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let e = if b.depth() == a.depth() + 1 && a.is_prefix_of(b) {
                b.steps.last().unwrap().edge
            } else if a.depth() == b.depth() + 1 && b.is_prefix_of(a) {
                g.opposite(a.steps.last().unwrap().edge)
            } else {
                return Err(Error::BadParameter("not a chain of adjacent vertices".into()));
            };
            edges.push(e);
        }
        Self::new(gog, cover.quotient_vertex(&path[0]), edges)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn end(&self, gog: &GraphOfGroups) -> VertexId {
        gog.graph().terminus(*self.edges.last().unwrap())
    }
}

/// Mass of the cylinder in the Gibbs measure on the cover: the backward cone
/// mass at the start times exp(amplitude - s len) times the forward cone
/// mass at the end, each normalized by the truncated Poincare sum.
pub fn cylinder_mass_tilde(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    radius: usize,
    spec: &CylinderSpec,
) -> Result<f64> {
    let g = gog.graph();
    let k = spec.len();
    if k > radius {
        return Err(Error::TruncationTooShallow(format!(
            "cylinder length {k} exceeds radius {radius}"
        )));
    }
    let mut amp = 0.0;
    for &e in &spec.edges {
        amp += conds.get(e) - s;
    }
    let fwd = cone_orbit_sum(
        gog,
        conds,
        s,
        spec.end(gog),
        FirstStep::BanOneLift(g.opposite(*spec.edges.last().unwrap())),
        radius - k,
    );
    let rev = conds.reversed(gog);
    let bwd = cone_orbit_sum(
        gog,
        &rev,
        s,
        spec.start,
        FirstStep::BanOneLift(spec.edges[0]),
        radius,
    );
    let q_fwd = poincare_partial(gog, conds, s, radius);
    let q_bwd = poincare_partial(gog, &rev, s, radius);
    Ok(bwd / q_bwd * amp.exp() * fwd / q_fwd)
}

/// Cylinder mass in the quotient: the cover mass divided by the order of the
/// pointwise stabilizer of the path.
pub fn cylinder_mass(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    radius: usize,
    spec: &CylinderSpec,
) -> Result<f64> {
    let tilde = cylinder_mass_tilde(gog, conds, s, radius, spec)?;
    let stab = path_stabilizer_order(gog, spec.start, &spec.edges)?;
    Ok(tilde / stab as f64)
}

/// Approximate total mass: the sum of unit cylinder masses over directed
/// quotient edges. Finite whenever the lattice data is finite.
pub fn total_mass(gog: &GraphOfGroups, conds: &Conductances, s: f64, radius: usize) -> Result<f64> {
    let mut acc = 0.0;
    for e in gog.graph().edges() {
        let spec = CylinderSpec::new(gog, gog.graph().origin(e), vec![e])?;
        acc += cylinder_mass(gog, conds, s, radius, &spec)?;
    }
    Ok(acc)
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsCheck {
    /// (length, log mass - amplitude) per cylinder.
    pub points: Vec<(usize, f64)>,
    pub fit: LineFit,
    /// Half the spread of residuals around the fitted line: the log of the
    /// best multiplicative Gibbs constant for these cylinders.
    pub log_constant: f64,
}

/// Check the Gibbs property on a family of cylinders: log m([p]) minus the
/// path amplitude should be affine in the length with slope -delta, up to a
/// uniformly bounded error.
pub fn gibbs_property_check(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    radius: usize,
    cylinders: &[CylinderSpec],
) -> Result<GibbsCheck> {
    let mut points = Vec::with_capacity(cylinders.len());
    for spec in cylinders {
        let m = cylinder_mass_tilde(gog, conds, s, radius, spec)?;
        if m <= 0.0 {
            return Err(Error::Other("cylinder of zero mass".into()));
        }
        let mut amp = 0.0;
        for &e in &spec.edges {
            amp += conds.get(e);
        }
        points.push((spec.len(), m.ln() - amp));
    }
    let xs: Vec<f64> = points.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::BadParameter("need cylinders of at least two lengths".into()))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - (fit.slope * x + fit.intercept);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(GibbsCheck {
        points,
        fit,
        log_constant: (hi - lo) / 2.0,
    })
}

/// A random cylinder spec: a path in the quotient graph admitting at least
/// one cover lift (every step keeps a positive number of allowed lifts).
pub fn random_cylinder<R: Rng>(
    gog: &GraphOfGroups,
    start: VertexId,
    len: usize,
    rng: &mut R,
) -> Result<CylinderSpec> {
    let g = gog.graph();
    let mut at = start;
    let mut prev: Option<EdgeId> = None;
    let mut edges = Vec::with_capacity(len);
    for _ in 0..len {
        let options: Vec<EdgeId> = g
            .edges_from(at)
            .iter()
            .copied()
            .filter(|&f| {
                let mut mult = gog.index_at_origin(f);
                if prev.map(|p| g.opposite(p)) == Some(f) {
                    mult -= 1;
                }
                mult > 0
            })
            .collect();
        if options.is_empty() {
            return Err(Error::DegenerateLattice("walk got stuck".into()));
        }
        let f = options[rng.gen_range(0..options.len())];
        edges.push(f);
        prev = Some(f);
        at = g.terminus(f);
    }
    CylinderSpec::new(gog, start, edges)
}

/// Seeded sampler of geodesic flow trajectories from the base lift. The next
/// step is drawn with probability proportional to the conditional cylinder
/// mass of the extended path; lifts of the same quotient edge are uniform.
pub struct GeodesicSampler<'a> {
    gog: &'a GraphOfGroups,
    /// forward weight of a directed edge: exp(c - s) times the truncated
    /// forward cone mass beyond it
    edge_weight: Vec<f64>,
}

impl<'a> GeodesicSampler<'a> {
    pub fn new(gog: &'a GraphOfGroups, conds: &Conductances, s: f64, horizon: usize) -> Self {
        let g = gog.graph();
        let edge_weight = g
            .edges()
            .map(|f| {
                let tail = cone_orbit_sum(
                    gog,
                    conds,
                    s,
                    g.terminus(f),
                    FirstStep::BanOneLift(g.opposite(f)),
                    horizon,
                );
                (conds.get(f) - s).exp() * tail
            })
            .collect();
        Self { gog, edge_weight }
    }

    /// Draw the next step given the quotient position and the edge the
    /// trajectory arrived along (None at the start).
    pub fn step<R: Rng>(&self, at: VertexId, arrived: Option<EdgeId>, rng: &mut R) -> Option<Step> {
        let g = self.gog.graph();
        let back = arrived.map(|e| g.opposite(e));
        let mut weights = Vec::new();
        let mut total = 0.0;
        for &f in g.edges_from(at) {
            let mut lifts = self.gog.index_at_origin(f);
            if back == Some(f) {
                lifts -= 1;
            }
            let w = lifts as f64 * self.edge_weight[f.0];
            weights.push((f, lifts, w));
            total += w;
        }
        if total <= 0.0 {
            return None;
        }
        let mut x = rng.gen_range(0.0..total);
        let mut fallback = None;
        for (f, lifts, w) in weights {
            if w > 0.0 {
                fallback = Some((f, lifts));
                if x < w {
                    break;
                }
            }
            x -= w;
        }
        // a rounding shortfall at the end lands on the last positive option
        fallback.map(|(f, lifts)| {
            // lifts of the arrival edge skip the identity coset, which would
            // backtrack
            let skip = (back == Some(f)) as usize;
            let c = skip + rng.gen_range(0..lifts as usize);
            Step { edge: f, coset: c }
        })
    }

    /// Sample a trajectory of the given length from the base lift. Returns
    /// the address steps; prefixes of the result are the visited vertices.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Result<Vec<Step>> {
        let g = self.gog.graph();
        let mut at = self.gog.base();
        let mut arrived = None;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let step = self
                .step(at, arrived, rng)
                .ok_or_else(|| Error::DegenerateLattice("sampler got stuck".into()))?;
            at = g.terminus(step.edge);
            arrived = Some(step.edge);
            out.push(step);
        }
        Ok(out)
    }
}

/// Multiplicity-aware count of lifts available for a step, shared with the
/// samplers and tests.
pub fn allowed_lifts(gog: &GraphOfGroups, f: EdgeId, arrived: Option<EdgeId>) -> Int {
    let mut lifts = gog.index_at_origin(f);
    if arrived.map(|e| gog.graph().opposite(e)) == Some(f) {
        lifts -= 1;
    }
    lifts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::DEFAULT_ENUM_CAP;
    use crate::lattice::modular_ray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(q: Int, depth: usize) -> GraphOfGroups {
        modular_ray(q, depth, DEFAULT_ENUM_CAP).unwrap()
    }

    fn cylinders_through_base(gog: &GraphOfGroups, max_len: usize) -> Vec<CylinderSpec> {
        let cover = Cover::new(gog);
        let ball = cover.ball(max_len);
        let base = CoverVertex::base();
        let mut out = Vec::new();
        for v in &ball {
            if v.depth() >= 1 {
                let path = cover.geodesic(&base, v);
                out.push(CylinderSpec::from_cover_path(gog, &path).unwrap());
            }
        }
        out
    }

    #[test]
    fn gibbs_slope_matches_minus_delta() {
        // s must sit close to delta and the truncation radius must leave the
        // cone sums converged, else the slope picks up the offset s - delta
        let gog = setup(2, 120);
        let conds = Conductances::zero(&gog);
        let s = 2.0f64.ln() + 0.02;
        let cylinders = cylinders_through_base(&gog, 6);
        let check = gibbs_property_check(&gog, &conds, s, 110, &cylinders).unwrap();
        assert!(
            (check.fit.slope + 2.0f64.ln()).abs() < 0.05,
            "slope {}",
            check.fit.slope
        );
        assert!(check.log_constant < 10.0);
    }

    #[test]
    fn cylinder_sibling_additivity() {
        let gog = setup(2, 30);
        let conds = Conductances::zero(&gog);
        let s = 2.0f64.ln() + 0.1;
        let cover = Cover::new(&gog);
        let base = CoverVertex::base();
        let ball = cover.ball(4);
        for v in ball.iter().filter(|v| v.depth() == 3) {
            let parent =
                CylinderSpec::from_cover_path(&gog, &cover.geodesic(&base, v)).unwrap();
            let pm = cylinder_mass_tilde(&gog, &conds, s, 22, &parent).unwrap();
            let mut child_sum = 0.0;
            for w in cover.neighbors(v) {
                if w.depth() == 4 {
                    let child =
                        CylinderSpec::from_cover_path(&gog, &cover.geodesic(&base, &w)).unwrap();
                    child_sum += cylinder_mass_tilde(&gog, &conds, s, 22, &child).unwrap();
                }
            }
            assert!((pm - child_sum).abs() < 0.15 * pm, "{pm} vs {child_sum}");
        }
    }

    #[test]
    fn stabilizer_trivial_through_base() {
        let gog = setup(2, 10);
        let g = gog.graph();
        let spec = CylinderSpec::new(
            &gog,
            g.vertex_by_name("v1").unwrap(),
            vec![g.edge_by_name("e0~").unwrap(), g.edge_by_name("e0").unwrap()],
        )
        .unwrap();
        let tilde = cylinder_mass_tilde(&gog, &Conductances::zero(&gog), 1.0, 12, &spec).unwrap();
        let quot = cylinder_mass(&gog, &Conductances::zero(&gog), 1.0, 12, &spec).unwrap();
        assert!((tilde - quot).abs() < 1e-15);
    }

    #[test]
    fn sampler_is_deterministic() {
        let gog = setup(2, 20);
        let conds = Conductances::zero(&gog);
        let sampler = GeodesicSampler::new(&gog, &conds, 2.0f64.ln() + 0.1, 10);
        let a = sampler
            .sample(500, &mut ChaCha20Rng::seed_from_u64(42))
            .unwrap();
        let b = sampler
            .sample(500, &mut ChaCha20Rng::seed_from_u64(42))
            .unwrap();
        let c = sampler
            .sample(500, &mut ChaCha20Rng::seed_from_u64(43))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_trajectories_are_valid_addresses() {
        let gog = setup(2, 20);
        let conds = Conductances::zero(&gog);
        let sampler = GeodesicSampler::new(&gog, &conds, 2.0f64.ln() + 0.1, 10);
        let steps = sampler
            .sample(2000, &mut ChaCha20Rng::seed_from_u64(7))
            .unwrap();
        let cover = Cover::new(&gog);
        let v = CoverVertex { steps };
        cover.validate_address(&v).unwrap();
    }

    #[test]
    fn sampler_descends_with_rate_q_minus_1_over_q() {
        // interior vertices arrived from below: q - 1 of the q continuations
        // turn back down in the quotient; the horizon must reach back to the
        // base orbit from every counted depth or the up-weight degenerates
        let q = 2u128;
        let gog = setup(q, 60);
        let conds = Conductances::zero(&gog);
        let sampler = GeodesicSampler::new(&gog, &conds, (q as f64).ln() + 0.02, 55);
        let steps = sampler
            .sample(60_000, &mut ChaCha20Rng::seed_from_u64(9))
            .unwrap();
        let g = gog.graph();
        let depths = g.depths_from(gog.base());
        let mut down = 0usize;
        let mut total = 0usize;
        let mut at = gog.base();
        let mut arrived_up = false;
        for s in &steps {
            let next = g.terminus(s.edge);
            if arrived_up && depths[at.0] >= 2 && depths[at.0] <= 25 {
                total += 1;
                if depths[next.0] < depths[at.0] {
                    down += 1;
                }
            }
            arrived_up = depths[next.0] > depths[at.0];
            at = next;
        }
        let rate = down as f64 / total as f64;
        let expect = (q as f64 - 1.0) / q as f64;
        assert!((rate - expect).abs() < 0.05, "rate {rate} expect {expect}");
    }

    #[test]
    fn random_cylinder_is_valid() {
        let gog = setup(3, 10);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let spec = random_cylinder(&gog, gog.base(), 6, &mut rng).unwrap();
            assert_eq!(spec.len(), 6);
            // constructor revalidates the path
            CylinderSpec::new(&gog, spec.start, spec.edges.clone()).unwrap();
        }
    }
}
