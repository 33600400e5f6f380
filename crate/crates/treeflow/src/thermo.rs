//! Thermodynamic layer: edge conductances (the potential), weighted orbital
//! growth and the critical exponent, truncated Patterson densities on cones,
//! the Gibbs cocycle, a shadow-lemma check, and pointwise path stabilizers.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::algebra::{gcd, GroupElement, Int};
use crate::cover::{Cover, CoverVertex};
use crate::error::{Error, Result};
use crate::lattice::{EdgeId, GraphOfGroups, VertexId};
use crate::numeric::{linear_fit, KahanSum};

/// A potential on directed quotient edges. The reversal and constant-shift
/// operations mirror the F^iota and F + sigma transformations.
#[derive(Clone, Debug, PartialEq)]
pub struct Conductances {
    values: Vec<f64>,
}

impl Conductances {
    pub fn zero(gog: &GraphOfGroups) -> Self {
        Self {
            values: vec![0.0; gog.graph().n_edges()],
        }
    }

    pub fn uniform(gog: &GraphOfGroups, value: f64) -> Self {
        Self {
            values: vec![value; gog.graph().n_edges()],
        }
    }

    /// Named assignment; unnamed edges keep conductance 0.
    pub fn from_pairs(gog: &GraphOfGroups, pairs: &[(String, f64)]) -> Result<Self> {
        let mut values = vec![0.0; gog.graph().n_edges()];
        for (name, v) in pairs {
            let e = gog
                .graph()
                .edge_by_name(name)
                .ok_or_else(|| Error::BadParameter(format!("unknown edge {name}")))?;
            values[e.0] = *v;
        }
        Ok(Self { values })
    }

    pub fn get(&self, e: EdgeId) -> f64 {
        self.values[e.0]
    }

    pub fn set(&mut self, e: EdgeId, v: f64) {
        self.values[e.0] = v;
    }

    /// c^iota(e) = c(e~).
    pub fn reversed(&self, gog: &GraphOfGroups) -> Self {
        let values = gog
            .graph()
            .edges()
            .map(|e| self.values[gog.graph().opposite(e).0])
            .collect();
        Self { values }
    }

    pub fn shifted(&self, sigma: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + sigma).collect(),
        }
    }
}

/// Amplitude of the path: the sum of conductances of traversed edges.
pub fn amplitude(gog: &GraphOfGroups, conds: &Conductances, path: &[CoverVertex]) -> Result<f64> {
    let mut acc = KahanSum::new();
    for w in path.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let e = if b.depth() == a.depth() + 1 && a.is_prefix_of(b) {
            b.steps.last().unwrap().edge
        } else if a.depth() == b.depth() + 1 && b.is_prefix_of(a) {
            gog.graph().opposite(a.steps.last().unwrap().edge)
        } else {
            return Err(Error::Other("path is not a chain of adjacent vertices".into()));
        };
        acc.add(conds.get(e));
    }
    Ok(acc.value())
}

/// Amplitude minus s times length along the geodesic from x to y.
pub fn amp_s(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    x: &CoverVertex,
    y: &CoverVertex,
) -> f64 {
    let cover = Cover::new(gog);
    let path = cover.geodesic(x, y);
    let a = amplitude(gog, conds, &path).expect("geodesic is a valid path");
    a - s * (x.distance(y) as f64)
}

/// Which first steps of a cone sum are admissible.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FirstStep {
    /// Every direction.
    Free,
    /// Every direction except all lifts of this quotient edge.
    BanQuotient(EdgeId),
    /// Every direction except one single lift of this quotient edge.
    BanOneLift(EdgeId),
}

/// Sum of exp(amplitude - s * distance) over cover vertices lifting the base
/// vertex, reachable from a lift of `from` by paths of length <= budget whose
/// first step respects `first`. The apex itself contributes 1 when it lifts
/// the base vertex. This is the truncated orbital mass of a cone.
pub fn cone_orbit_sum(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    from: VertexId,
    first: FirstStep,
    budget: usize,
) -> f64 {
    let g = gog.graph();
    let ne = g.n_edges();
    let weight = |f: EdgeId| (conds.get(f) - s).exp();
    let mut acc = KahanSum::new();
    if from == gog.base() {
        acc.add(1.0);
    }
    let mut w = vec![0.0f64; ne];
    for &f in g.edges_from(from) {
        let mut mult = gog.index_at_origin(f) as f64;
        match first {
            FirstStep::Free => {}
            FirstStep::BanQuotient(b) if f == b => mult = 0.0,
            FirstStep::BanOneLift(b) if f == b => mult -= 1.0,
            _ => {}
        }
        if mult > 0.0 {
            w[f.0] += mult * weight(f);
        }
    }
    for _ in 1..=budget {
        for f in g.edges() {
            if w[f.0] != 0.0 && g.terminus(f) == gog.base() {
                acc.add(w[f.0]);
            }
        }
        let mut next = vec![0.0f64; ne];
        for e in g.edges() {
            if w[e.0] == 0.0 {
                continue;
            }
            for &f in g.edges_from(g.terminus(e)) {
                let mut mult = gog.index_at_origin(f) as f64;
                if f == g.opposite(e) {
                    mult -= 1.0;
                }
                if mult > 0.0 {
                    next[f.0] += w[e.0] * mult * weight(f);
                }
            }
        }
        w = next;
    }
    // the last generation still pending in w corresponds to distance
    // budget + 1; it is intentionally dropped
    acc.value()
}

/// Weighted annulus sums over the orbit of the base lift: index n holds
/// sum over lifts z of the base vertex at distance n of
/// exp(amplitude(base -> z) - s n). Index 0 is 1 for the base itself.
pub fn annulus_sums(gog: &GraphOfGroups, conds: &Conductances, s: f64, radius: usize) -> Vec<f64> {
    let g = gog.graph();
    let ne = g.n_edges();
    let weight = |f: EdgeId| (conds.get(f) - s).exp();
    let mut out = vec![1.0f64];
    let mut w = vec![0.0f64; ne];
    for &f in g.edges_from(gog.base()) {
        w[f.0] = gog.index_at_origin(f) as f64 * weight(f);
    }
    for _ in 1..=radius {
        let mut level = KahanSum::new();
        for f in g.edges() {
            if g.terminus(f) == gog.base() {
                level.add(w[f.0]);
            }
        }
        out.push(level.value());
        let mut next = vec![0.0f64; ne];
        for e in g.edges() {
            if w[e.0] == 0.0 {
                continue;
            }
            for &f in g.edges_from(g.terminus(e)) {
                let mut mult = gog.index_at_origin(f) as f64;
                if f == g.opposite(e) {
                    mult -= 1.0;
                }
                if mult > 0.0 {
                    next[f.0] += w[e.0] * mult * weight(f);
                }
            }
        }
        w = next;
    }
    out
}

/// Truncated Poincare sum over the orbit (per unit stabilizer): the series
/// diverges at s below the critical exponent as radius grows.
pub fn poincare_partial(gog: &GraphOfGroups, conds: &Conductances, s: f64, radius: usize) -> f64 {
    kahan_total(&annulus_sums(gog, conds, s, radius))
}

fn kahan_total(xs: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub window: (usize, usize),
    pub points: usize,
    pub r_squared: f64,
}

/// Estimate the critical exponent from the slope of log annulus sums over
/// the trailing half window, skipping empty annuli (periodic distance sets).
pub fn critical_exponent(
    gog: &GraphOfGroups,
    conds: &Conductances,
    radius: usize,
) -> Result<DeltaEstimate> {
    let a = annulus_sums(gog, conds, 0.0, radius);
    let lo = (radius / 2).max(1);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in lo..=radius {
        if a[n] > 0.0 {
            xs.push(n as f64);
            ys.push(a[n].ln());
        }
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| {
        Error::TruncationTooShallow(format!(
            "only {} nonempty annuli in [{lo}, {radius}]",
            xs.len()
        ))
    })?;
    Ok(DeltaEstimate {
        delta: fit.slope,
        window: (lo, radius),
        points: fit.n,
        r_squared: fit.r_squared,
    })
}

/// Gibbs cocycle for the potential c - s along the boundary direction of the
/// address `xi`: amp_s(y -> xi) - amp_s(x -> xi). Exact once the endpoint of
/// `xi` lies strictly beyond the projections of x and y on the ray.
pub fn gibbs_cocycle(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    xi: &CoverVertex,
    x: &CoverVertex,
    y: &CoverVertex,
) -> Result<f64> {
    let lx = x.common_prefix_len(xi).min(x.depth());
    let ly = y.common_prefix_len(xi).min(y.depth());
    if xi.depth() <= lx.max(ly) {
        return Err(Error::ExtendRay);
    }
    Ok(amp_s(gog, conds, s, y, xi) - amp_s(gog, conds, s, x, xi))
}

/// Truncated Patterson density at parameter s. Masses are orbital cone sums
/// normalized by the truncated Poincare sum at the base.
pub struct PattersonDensity<'a> {
    gog: &'a GraphOfGroups,
    conds: Conductances,
    pub s: f64,
    pub radius: usize,
    normalizer: f64,
}

impl<'a> PattersonDensity<'a> {
    pub fn new(gog: &'a GraphOfGroups, conds: &Conductances, s: f64, radius: usize) -> Self {
        let normalizer = poincare_partial(gog, conds, s, radius);
        Self {
            gog,
            conds: conds.clone(),
            s,
            radius,
            normalizer,
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Mass, seen from y, of the cone of boundary directions through `apex`
    /// (addresses extending the apex). y must not lie strictly inside the
    /// cone.
    pub fn cone_mass(&self, y: &CoverVertex, apex: &CoverVertex) -> Result<f64> {
        if apex.is_prefix_of(y) && apex != y {
            return Err(Error::BadParameter(
                "viewpoint lies strictly inside the cone".into(),
            ));
        }
        let d = y.distance(apex);
        if d > self.radius {
            return Err(Error::TruncationTooShallow(format!(
                "cone apex at distance {d} exceeds radius {}",
                self.radius
            )));
        }
        let cover = Cover::new(self.gog);
        let head = amp_s(self.gog, &self.conds, self.s, y, apex);
        let first = match apex.steps.last() {
            Some(last) => FirstStep::BanOneLift(self.gog.graph().opposite(last.edge)),
            None => FirstStep::Free,
        };
        let tail = cone_orbit_sum(
            self.gog,
            &self.conds,
            self.s,
            cover.quotient_vertex(apex),
            first,
            self.radius - d,
        );
        Ok(head.exp() * tail / self.normalizer)
    }

    /// Total truncated mass of the boundary seen from the base lift.
    pub fn total_mass(&self) -> f64 {
        cone_orbit_sum(
            self.gog,
            &self.conds,
            self.s,
            self.gog.base(),
            FirstStep::Free,
            self.radius,
        ) / self.normalizer
    }

    /// Mass of the shadow of B(center, r) seen from the base lift.
    pub fn shadow_mass(&self, center: &CoverVertex, r: usize) -> Result<f64> {
        let cover = Cover::new(self.gog);
        match cover.shadow_apex(center, r) {
            Some(apex) => self.cone_mass(&CoverVertex::base(), &apex),
            None => Ok(self.total_mass()),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShadowStats {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub points: usize,
}

/// Shadow-lemma ratios kappa(z) = mu(shadow of B(z, r)) / exp(amp_s(base, z))
/// over orbit points with r < d(base, z) <= dmax.
pub fn shadow_lemma_stats(
    gog: &GraphOfGroups,
    conds: &Conductances,
    s: f64,
    r: usize,
    radius: usize,
    dmax: usize,
) -> Result<ShadowStats> {
    let cover = Cover::new(gog);
    let density = PattersonDensity::new(gog, conds, s, radius);
    let base = CoverVertex::base();
    let mut kappa_min = f64::INFINITY;
    let mut kappa_max = f64::NEG_INFINITY;
    let mut points = 0usize;
    for z in cover.ball(dmax) {
        if z.depth() <= r || cover.quotient_vertex(&z) != gog.base() {
            continue;
        }
        let shadow = density.shadow_mass(&z, r)?;
        let weight = amp_s(gog, conds, s, &base, &z).exp();
        let kappa = shadow / weight;
        kappa_min = kappa_min.min(kappa);
        kappa_max = kappa_max.max(kappa);
        points += 1;
    }
    if points == 0 {
        return Err(Error::TruncationTooShallow(
            "no orbit points beyond the shadow radius".into(),
        ));
    }
    Ok(ShadowStats {
        kappa_min,
        kappa_max,
        points,
    })
}

/// Order of the pointwise stabilizer of a path in the cover, given by its
/// start vertex and quotient edge word. Uses the unique-subgroup structure
/// of cyclic groups when every group along the path is cyclic, and element
/// enumeration otherwise.
pub fn path_stabilizer_order(
    gog: &GraphOfGroups,
    start: VertexId,
    edges: &[EdgeId],
) -> Result<Int> {
    let g = gog.graph();
    let mut at = start;
    for &e in edges {
        if g.origin(e) != at {
            return Err(Error::BadParameter("edge word is not a path".into()));
        }
        at = g.terminus(e);
    }
    let mut all_cyclic = gog.vertex_group(start).is_cyclic();
    for &e in edges {
        all_cyclic = all_cyclic
            && gog.edge_group(e).is_cyclic()
            && gog.vertex_group(g.terminus(e)).is_cyclic();
    }
    if all_cyclic {
        // in a cyclic group the subgroup of a given order is unique, so only
        // orders matter along the chain
        let mut ord = gog.vertex_group(start).order();
        for &e in edges {
            ord = gcd(ord, gog.edge_group(e).order());
        }
        return Ok(ord);
    }
    path_stabilizer_order_elements(gog, start, edges)
}

fn path_stabilizer_order_elements(
    gog: &GraphOfGroups,
    start: VertexId,
    edges: &[EdgeId],
) -> Result<Int> {
    let cap = gog.cap();
    let mut current: BTreeSet<GroupElement> = gog
        .vertex_group(start)
        .enumerate(cap)?
        .into_iter()
        .collect();
    for &e in edges {
        let mono = gog.rho_into_origin(e);
        let image: BTreeSet<GroupElement> = mono
            .source()
            .enumerate(cap)?
            .iter()
            .map(|k| mono.apply(k))
            .collect();
        let back = mono.image_to_source(cap)?;
        let next_mono = gog.rho_into_terminus(e);
        current = current
            .intersection(&image)
            .map(|h| {
                let k = back.get(h).expect("element of the image has a preimage");
                next_mono.apply(k)
            })
            .collect();
    }
    Ok(current.len() as Int)
}
