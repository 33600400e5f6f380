//! The universal cover of a graph of groups: Bass-Serre tree vertices as
//! reduced coset addresses, local exploration, geodesics, shadows, and the
//! deck action by normal-form words.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::algebra::{FiniteAbelianGroup, GroupElement, Int};
use crate::error::{Error, Result};
use crate::lattice::{EdgeId, GraphOfGroups, VertexId};

/// One step of an address: traverse the lift of `edge` chosen by the coset
/// index in G_{o(edge)} / rho_edge(G_edge). Coset 0 is the identity coset.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Step {
    pub edge: EdgeId,
    pub coset: usize,
}

/// A vertex of the universal cover: the reduced address of the unique
/// geodesic from the canonical lift of the base vertex. Reduced means no
/// step is followed by the opposite edge with the identity coset.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, PartialOrd, Ord)]
pub struct CoverVertex {
    pub steps: Vec<Step>,
}

impl CoverVertex {
    pub fn base() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn prefix(&self, n: usize) -> Self {
        Self {
            steps: self.steps[..n].to_vec(),
        }
    }

    pub fn common_prefix_len(&self, other: &Self) -> usize {
        self.steps
            .iter()
            .zip(&other.steps)
            .take_while(|(a, b)| a == b)
            .count()
    }

    pub fn distance(&self, other: &Self) -> usize {
        let l = self.common_prefix_len(other);
        self.depth() + other.depth() - 2 * l
    }

    pub fn is_prefix_of(&self, other: &Self) -> bool {
        self.depth() <= other.depth() && self.common_prefix_len(other) == self.depth()
    }
}

/// Read-only view of the cover over a graph of groups.
pub struct Cover<'a> {
    gog: &'a GraphOfGroups,
}

impl<'a> Cover<'a> {
    pub fn new(gog: &'a GraphOfGroups) -> Self {
        Self { gog }
    }

    pub fn gog(&self) -> &'a GraphOfGroups {
        self.gog
    }

    pub fn quotient_vertex(&self, v: &CoverVertex) -> VertexId {
        match v.steps.last() {
            Some(s) => self.gog.graph().terminus(s.edge),
            None => self.gog.base(),
        }
    }

    /// Check that an address is a valid reduced path from the base.
    pub fn validate_address(&self, v: &CoverVertex) -> Result<()> {
        let mut at = self.gog.base();
        let mut prev: Option<EdgeId> = None;
        for s in &v.steps {
            if self.gog.graph().origin(s.edge) != at {
                return Err(Error::InvalidLattice(format!(
                    "address step {} does not start at the current vertex",
                    self.gog.graph().edge_name(s.edge)
                )));
            }
            if s.coset as Int >= self.gog.index_at_origin(s.edge) {
                return Err(Error::InvalidLattice("coset index out of range".into()));
            }
            if let Some(p) = prev {
                if s.edge == self.gog.graph().opposite(p) && s.coset == 0 {
                    return Err(Error::InvalidLattice("address is not reduced".into()));
                }
            }
            at = self.gog.graph().terminus(s.edge);
            prev = Some(s.edge);
        }
        Ok(())
    }

    /// All cover neighbors: the parent (when not at the base) plus every
    /// reduced forward step.
    pub fn neighbors(&self, v: &CoverVertex) -> Vec<CoverVertex> {
        let mut out = Vec::new();
        if !v.steps.is_empty() {
            out.push(v.prefix(v.depth() - 1));
        }
        let at = self.quotient_vertex(v);
        let back = v.steps.last().map(|s| self.gog.graph().opposite(s.edge));
        for &f in self.gog.graph().edges_from(at) {
            let idx = self.gog.index_at_origin(f) as usize;
            let skip_identity = back == Some(f);
            for c in 0..idx {
                if skip_identity && c == 0 {
                    continue;
                }
                let mut steps = v.steps.clone();
                steps.push(Step { edge: f, coset: c });
                out.push(CoverVertex { steps });
            }
        }
        out
    }

    /// Degree of the lift, cross-checkable against lift_degree on the
    /// quotient.
    pub fn degree(&self, v: &CoverVertex) -> usize {
        self.neighbors(v).len()
    }

    /// Every cover vertex within the given distance of the base lift.
    /// Exponential in `radius`; intended for small radii.
    pub fn ball(&self, radius: usize) -> Vec<CoverVertex> {
        let mut out = vec![CoverVertex::base()];
        let mut frontier = vec![CoverVertex::base()];
        for _ in 0..radius {
            let mut next = Vec::new();
            for v in &frontier {
                for w in self.neighbors(v) {
                    if w.depth() > v.depth() {
                        next.push(w);
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// Sphere cardinalities |S(base, n)| for n = 0..=radius, computed by the
    /// non-backtracking step recursion on quotient edges.
    pub fn sphere_sizes(&self, radius: usize) -> Vec<Int> {
        let g = self.gog.graph();
        let ne = g.n_edges();
        let mut sizes = vec![1 as Int];
        // counts[e] = number of cover vertices at the current depth whose
        // address ends with a lift of e
        let mut counts = vec![0 as Int; ne];
        for &e in g.edges_from(self.gog.base()) {
            counts[e.0] = self.gog.index_at_origin(e);
        }
        for _ in 1..=radius {
            sizes.push(counts.iter().sum());
            let mut next = vec![0 as Int; ne];
            for e in 0..ne {
                if counts[e] == 0 {
                    continue;
                }
                for &f in g.edges_from(g.terminus(EdgeId(e))) {
                    let mut mult = self.gog.index_at_origin(f);
                    if f == g.opposite(EdgeId(e)) {
                        mult -= 1;
                    }
                    next[f.0] += counts[e] * mult;
                }
            }
            counts = next;
        }
        sizes.truncate(radius + 1);
        sizes
    }

    /// The geodesic from x to y as the list of successive cover vertices.
    pub fn geodesic(&self, x: &CoverVertex, y: &CoverVertex) -> Vec<CoverVertex> {
        let l = x.common_prefix_len(y);
        let mut out = Vec::with_capacity(x.depth() + y.depth() - 2 * l + 1);
        for d in (l..=x.depth()).rev() {
            out.push(x.prefix(d));
        }
        for d in (l + 1)..=y.depth() {
            out.push(y.prefix(d));
        }
        out
    }

    /// Visual distance seen from the base between the boundary directions of
    /// two address prefixes: exp(-d(base, ]xi, eta[)). Fails when one prefix
    /// extends the other, because the separation point is then unresolved.
    pub fn visual_distance(&self, x: &CoverVertex, y: &CoverVertex) -> Result<f64> {
        let l = x.common_prefix_len(y);
        if l == x.depth() || l == y.depth() {
            return Err(Error::ExtendRay);
        }
        Ok((-(l as f64)).exp())
    }

    /// Apex of the shadow of B(y, r) seen from the base: the cone of
    /// boundary directions through the returned vertex. None when the base
    /// lies inside the ball, so the shadow is the whole boundary.
    pub fn shadow_apex(&self, y: &CoverVertex, r: usize) -> Option<CoverVertex> {
        if y.depth() <= r {
            None
        } else {
            Some(y.prefix(y.depth() - r))
        }
    }
}

// ---------------------------------------------------------------------------
// deck transformations
// ---------------------------------------------------------------------------

/// A token of a normal-form word: a vertex group element or an edge letter.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Token {
    Element(GroupElement),
    Edge(EdgeId),
}

/// A word in the fundamental group of the graph of groups, read left to
/// right starting at the base vertex. Words acting on the cover must be
/// loops at the base.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct DeckWord {
    pub tokens: Vec<Token>,
}

impl DeckWord {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn concat(&self, other: &DeckWord) -> DeckWord {
        let mut tokens = self.tokens.clone();
        tokens.extend(other.tokens.iter().cloned());
        DeckWord { tokens }
    }
}

struct EdgeTable {
    reps: Vec<GroupElement>,
    /// element of G_{o(e)} -> (coset index, edge-group preimage of the
    /// remainder under the origin monomorphism)
    decomp: HashMap<GroupElement, (usize, GroupElement)>,
}

/// Element-mode context for the deck action. Coset decomposition tables are
/// built lazily per directed edge and require the origin vertex group to fit
/// under the enumeration cap.
pub struct DeckContext<'a> {
    gog: &'a GraphOfGroups,
    tables: RefCell<HashMap<usize, std::rc::Rc<EdgeTable>>>,
}

impl<'a> DeckContext<'a> {
    pub fn new(gog: &'a GraphOfGroups) -> Self {
        Self {
            gog,
            tables: RefCell::new(HashMap::new()),
        }
    }

    fn table(&self, e: EdgeId) -> Result<std::rc::Rc<EdgeTable>> {
        if let Some(t) = self.tables.borrow().get(&e.0) {
            return Ok(t.clone());
        }
        let mono = self.gog.rho_into_origin(e);
        let group = mono.target();
        let cap = self.gog.cap();
        if group.order() > cap {
            return Err(Error::EnumerationCap {
                order: group.order(),
                cap,
            });
        }
        let reps = group.cosets(mono.image_gens(), cap)?;
        let mut decomp = HashMap::new();
        for k in mono.source().enumerate(cap)? {
            let img = mono.apply(&k);
            for (i, rep) in reps.iter().enumerate() {
                decomp.insert(group.add(rep, &img), (i, k.clone()));
            }
        }
        let table = std::rc::Rc::new(EdgeTable { reps, decomp });
        self.tables.borrow_mut().insert(e.0, table.clone());
        Ok(table)
    }

    /// Apply a loop word at the base to a cover vertex. The composite token
    /// stream is reduced with the Bass-Serre relations and renormalized to a
    /// reduced coset address.
    pub fn apply(&self, word: &DeckWord, v: &CoverVertex) -> Result<CoverVertex> {
        let g = self.gog.graph();
        // turn the address into tokens: coset rep, then the edge letter
        let mut tokens: Vec<Token> = word.tokens.clone();
        for s in &v.steps {
            let t = self.table(s.edge)?;
            tokens.push(Token::Element(t.reps[s.coset].clone()));
            tokens.push(Token::Edge(s.edge));
        }
        // stack reduction: (edge, preceding element) pairs plus a pending
        // element at the current vertex
        let mut stack: Vec<(EdgeId, GroupElement)> = Vec::new();
        let mut at = self.gog.base();
        let mut pending = self.gog.vertex_group(at).zero();
        for tok in tokens {
            match tok {
                Token::Element(h) => {
                    pending = self.gog.vertex_group(at).add(&pending, &h);
                }
                Token::Edge(f) => {
                    if g.origin(f) != at {
                        return Err(Error::InvalidLattice(format!(
                            "word token {} does not start at the current vertex",
                            g.edge_name(f)
                        )));
                    }
                    let cancels = match stack.last() {
                        Some((e, _)) if *e == g.opposite(f) => {
                            let t = self.table(f)?;
                            t.decomp
                                .get(&pending)
                                .map(|(idx, k)| (*idx == 0).then(|| k.clone()))
                                .flatten()
                        }
                        _ => None,
                    };
                    match cancels {
                        Some(k) => {
                            // e rho_{e~}(k) e~ = rho_e(k)
                            let (e, h_prev) = stack.pop().expect("cancellation needs a top");
                            at = g.origin(e);
                            let img = self.gog.rho_into_origin(e).apply(&k);
                            pending = self.gog.vertex_group(at).add(&h_prev, &img);
                        }
                        None => {
                            stack.push((f, pending));
                            at = g.terminus(f);
                            pending = self.gog.vertex_group(at).zero();
                        }
                    }
                }
            }
        }
        if at != self.gog.base() && stack.is_empty() {
            return Err(Error::InvalidLattice("word is not a loop at the base".into()));
        }
        // normalize elements to coset representatives, pushing remainders
        // through the edges to the right; the trailing element is absorbed
        // into the terminal vertex group
        let mut steps = Vec::with_capacity(stack.len());
        let mut carry: Option<GroupElement> = None;
        for (i, (e, h)) in stack.iter().enumerate() {
            let group = self.gog.vertex_group(g.origin(*e));
            let h = match carry.take() {
                Some(c) => group.add(h, &c),
                None => h.clone(),
            };
            let t = self.table(*e)?;
            let (idx, k) = t
                .decomp
                .get(&h)
                .ok_or_else(|| Error::Other("coset decomposition missing".into()))?;
            steps.push(Step {
                edge: *e,
                coset: *idx,
            });
            if i + 1 < stack.len() {
                carry = Some(self.gog.rho_into_terminus(*e).apply(k));
            }
        }
        let out = CoverVertex { steps };
        debug_assert!(Cover::new(self.gog).validate_address(&out).is_ok());
        Ok(out)
    }

    /// A pseudo-random loop at the base: walk `depth` random steps out,
    /// inserting random vertex group elements, then walk the same path back.
    pub fn random_loop<R: rand::Rng>(&self, depth: usize, rng: &mut R) -> Result<DeckWord> {
        let g = self.gog.graph();
        let mut tokens = Vec::new();
        let mut at = self.gog.base();
        let mut path = Vec::new();
        tokens.push(Token::Element(self.random_element(at, rng)?));
        for _ in 0..depth {
            let options = g.edges_from(at);
            let e = options[rng.gen_range(0..options.len())];
            tokens.push(Token::Edge(e));
            at = g.terminus(e);
            tokens.push(Token::Element(self.random_element(at, rng)?));
            path.push(e);
        }
        for e in path.into_iter().rev() {
            tokens.push(Token::Edge(g.opposite(e)));
            at = g.origin(e);
            tokens.push(Token::Element(self.random_element(at, rng)?));
        }
        debug_assert_eq!(at, self.gog.base());
        Ok(DeckWord { tokens })
    }

    fn random_element<R: rand::Rng>(&self, v: VertexId, rng: &mut R) -> Result<GroupElement> {
        let group = self.gog.vertex_group(v);
        let residues = group
            .factors()
            .iter()
            .map(|&f| rng.gen_range(0..f))
            .collect();
        group.element(residues)
    }
}

pub fn group_zero(group: &FiniteAbelianGroup) -> GroupElement {
    group.zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::DEFAULT_ENUM_CAP;
    use crate::lattice::{modular_ray, quadratic_growth};
    use rand::SeedableRng;

    #[test]
    fn sphere_sizes_modular_ray_two() {
        let gog = modular_ray(2, 10, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        assert_eq!(cover.sphere_sizes(5), vec![1, 3, 6, 12, 24, 48]);
    }

    #[test]
    fn sphere_sizes_match_ball_enumeration() {
        for (q, depth) in [(2u128, 5usize), (3, 4)] {
            let gog = modular_ray(q, 10, DEFAULT_ENUM_CAP).unwrap();
            let cover = Cover::new(&gog);
            let ball = cover.ball(depth);
            let sizes = cover.sphere_sizes(depth);
            for n in 0..=depth {
                let count = ball.iter().filter(|v| v.depth() == n).count();
                assert_eq!(count as Int, sizes[n], "q={q} n={n}");
            }
        }
    }

    #[test]
    fn ball_addresses_are_valid_and_distinct() {
        let gog = quadratic_growth(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        let ball = cover.ball(4);
        let mut seen = std::collections::HashSet::new();
        for v in &ball {
            cover.validate_address(v).unwrap();
            assert!(seen.insert(v.clone()));
        }
    }

    #[test]
    fn cover_degrees_match_lift_degrees() {
        let gog = quadratic_growth(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        for v in cover.ball(3) {
            if v.depth() < 3 {
                let expected = gog.lift_degree(cover.quotient_vertex(&v));
                assert_eq!(cover.degree(&v) as Int, expected);
            }
        }
    }

    #[test]
    fn geodesic_is_a_path_with_right_length() {
        let gog = modular_ray(2, 10, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        let ball = cover.ball(4);
        for x in ball.iter().step_by(7) {
            for y in ball.iter().step_by(11) {
                let path = cover.geodesic(x, y);
                assert_eq!(path.len(), x.distance(y) + 1);
                assert_eq!(path.first().unwrap(), x);
                assert_eq!(path.last().unwrap(), y);
                for w in path.windows(2) {
                    assert_eq!(w[0].distance(&w[1]), 1);
                }
            }
        }
    }

    #[test]
    fn visual_distance_prefix_rule() {
        let gog = modular_ray(2, 10, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        let ball = cover.ball(4);
        let x = ball.iter().find(|v| v.depth() == 4).unwrap();
        let y = ball
            .iter()
            .find(|v| v.depth() == 4 && v.common_prefix_len(x) == 2)
            .unwrap();
        assert!((cover.visual_distance(x, y).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!(cover.visual_distance(x, &x.prefix(2)).is_err());
    }

    #[test]
    fn shadow_apex_is_projection() {
        let gog = modular_ray(2, 10, DEFAULT_ENUM_CAP).unwrap();
        let cover = Cover::new(&gog);
        let ball = cover.ball(5);
        let y = ball.iter().find(|v| v.depth() == 5).unwrap();
        let apex = cover.shadow_apex(y, 2).unwrap();
        assert_eq!(apex, y.prefix(3));
        assert!(cover.shadow_apex(&y.prefix(2), 2).is_none());
    }

    #[test]
    fn deck_identity_and_base_element_action() {
        let gog = modular_ray(2, 8, DEFAULT_ENUM_CAP).unwrap();
        let ctx = DeckContext::new(&gog);
        let cover = Cover::new(&gog);
        let ball = cover.ball(4);
        for v in &ball {
            assert_eq!(&ctx.apply(&DeckWord::identity(), v).unwrap(), v);
        }
        // a generator of G_{v0} = Z/3 permutes the three depth-1 cosets of
        // the trivial edge group and fixes the base
        let g = gog.vertex_group(gog.base());
        let word = DeckWord {
            tokens: vec![Token::Element(g.element(vec![1]).unwrap())],
        };
        let base = CoverVertex::base();
        assert_eq!(ctx.apply(&word, &base).unwrap(), base);
        let mut images = std::collections::HashSet::new();
        for v in ball.iter().filter(|v| v.depth() == 1) {
            let w = ctx.apply(&word, v).unwrap();
            assert_eq!(w.depth(), 1);
            images.insert(w);
        }
        assert_eq!(images.len(), 3);
    }

    #[test]
    fn deck_action_preserves_distances() {
        let gog = quadratic_growth(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let ctx = DeckContext::new(&gog);
        let cover = Cover::new(&gog);
        let ball = cover.ball(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let word = ctx.random_loop(1 + trial % 3, &mut rng).unwrap();
            let images: Vec<CoverVertex> = ball
                .iter()
                .map(|v| ctx.apply(&word, v).unwrap())
                .collect();
            for (i, x) in ball.iter().enumerate() {
                cover.validate_address(&images[i]).unwrap();
                for (j, y) in ball.iter().enumerate().skip(i + 1) {
                    assert_eq!(x.distance(y), images[i].distance(&images[j]));
                }
            }
        }
    }

    #[test]
    fn deck_action_is_compatible_with_concatenation() {
        let gog = modular_ray(3, 8, DEFAULT_ENUM_CAP).unwrap();
        let ctx = DeckContext::new(&gog);
        let cover = Cover::new(&gog);
        let ball = cover.ball(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..15 {
            let w1 = ctx.random_loop(2, &mut rng).unwrap();
            let w2 = ctx.random_loop(2, &mut rng).unwrap();
            let w12 = w1.concat(&w2);
            for v in ball.iter().step_by(5) {
                let a = ctx.apply(&w1, &ctx.apply(&w2, v).unwrap()).unwrap();
                let b = ctx.apply(&w12, v).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn deck_table_respects_cap() {
        let gog = modular_ray(2, 30, 1000).unwrap();
        let ctx = DeckContext::new(&gog);
        // an address deep in the ray needs a table for a big cyclic group
        let mut steps = Vec::new();
        let g = gog.graph();
        let mut at = gog.base();
        for _ in 0..20 {
            let e = *g
                .edges_from(at)
                .iter()
                .find(|&&e| {
                    let d_from = g.depths_from(gog.base());
                    d_from[g.terminus(e).0] > d_from[at.0]
                })
                .unwrap();
            steps.push(Step { edge: e, coset: 0 });
            at = g.terminus(e);
        }
        let v = CoverVertex { steps };
        let word = DeckWord {
            tokens: vec![Token::Element(gog.vertex_group(gog.base()).element(vec![1]).unwrap())],
        };
        assert!(matches!(
            ctx.apply(&word, &v),
            Err(Error::EnumerationCap { .. })
        ));
    }
}
