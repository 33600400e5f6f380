//! Finite abelian groups given by invariant factors, their subgroups,
//! double cosets and monomorphisms.
//!
//! Everything here is exact integer arithmetic. Element-level work
//! (enumeration, coset representatives) is gated by an order cap so that
//! vertices carrying astronomically large groups can still be handled at
//! the level of orders and indices.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group orders can exceed `u64` on deep truncations, so use `u128` throughout.
pub type Int = u128;

/// Default cap on group orders for element-level enumeration.
pub const DEFAULT_ENUM_CAP: Int = 10_000;

pub fn gcd(a: Int, b: Int) -> Int {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn lcm(a: Int, b: Int) -> Int {
    if a == 0 || b == 0 {
        0
    } else {
        a / gcd(a, b) * b
    }
}

/// A finite abelian group, the direct product of cyclic groups of the given
/// orders. The empty factor list is the trivial group.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct FiniteAbelianGroup {
    factors: Vec<Int>,
}

/// An element: one residue per invariant factor, reduced componentwise.
#[derive(Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupElement {
    residues: Vec<Int>,
}

impl GroupElement {
    pub fn residues(&self) -> &[Int] {
        &self.residues
    }
}

impl FiniteAbelianGroup {
    pub fn new(factors: Vec<Int>) -> Result<Self> {
        if factors.iter().any(|&f| f < 2) {
            return Err(Error::InvalidGroup(format!(
                "invariant factors must be >= 2, got {factors:?}"
            )));
        }
        Ok(Self { factors })
    }

    pub fn trivial() -> Self {
        Self { factors: vec![] }
    }

    pub fn cyclic(n: Int) -> Result<Self> {
        if n == 1 {
            Ok(Self::trivial())
        } else {
            Self::new(vec![n])
        }
    }

    pub fn factors(&self) -> &[Int] {
        &self.factors
    }

    pub fn order(&self) -> Int {
        self.factors.iter().product()
    }

    pub fn is_trivial(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn is_cyclic(&self) -> bool {
        self.factors.len() <= 1
    }

    pub fn zero(&self) -> GroupElement {
        GroupElement {
            residues: vec![0; self.factors.len()],
        }
    }

    /// Build an element, rejecting unreduced residues.
    pub fn element(&self, residues: Vec<Int>) -> Result<GroupElement> {
        if residues.len() != self.factors.len() {
            return Err(Error::UnreducedElement);
        }
        if residues.iter().zip(&self.factors).any(|(&r, &f)| r >= f) {
            return Err(Error::UnreducedElement);
        }
        Ok(GroupElement { residues })
    }

    /// Reduce arbitrary residues componentwise.
    pub fn reduce(&self, residues: &[Int]) -> GroupElement {
        GroupElement {
            residues: residues
                .iter()
                .zip(&self.factors)
                .map(|(&r, &f)| r % f)
                .collect(),
        }
    }

    pub fn add(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement {
            residues: a
                .residues
                .iter()
                .zip(&b.residues)
                .zip(&self.factors)
                .map(|((&x, &y), &f)| (x + y) % f)
                .collect(),
        }
    }

    pub fn neg(&self, a: &GroupElement) -> GroupElement {
        GroupElement {
            residues: a
                .residues
                .iter()
                .zip(&self.factors)
                .map(|(&x, &f)| if x == 0 { 0 } else { f - x })
                .collect(),
        }
    }

    pub fn sub(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.add(a, &self.neg(b))
    }

    pub fn scalar_mul(&self, k: Int, a: &GroupElement) -> GroupElement {
        GroupElement {
            residues: a
                .residues
                .iter()
                .zip(&self.factors)
                .map(|(&x, &f)| (x % f).checked_mul(k % f).map(|v| v % f).unwrap_or_else(|| {
                    // fall back to doubling for huge residues
                    mul_mod(x, k, f)
                }))
                .collect(),
        }
    }

    pub fn element_order(&self, a: &GroupElement) -> Int {
        a.residues
            .iter()
            .zip(&self.factors)
            .map(|(&r, &f)| f / gcd(r, f))
            .fold(1, lcm)
    }

    /// All elements in lexicographic order. Errors above the cap.
    pub fn enumerate(&self, cap: Int) -> Result<Vec<GroupElement>> {
        let order = self.order();
        if order > cap {
            return Err(Error::EnumerationCap { order, cap });
        }
        let mut out = Vec::with_capacity(order as usize);
        let mut cur = vec![0 as Int; self.factors.len()];
        loop {
            out.push(GroupElement {
                residues: cur.clone(),
            });
            // lexicographic increment, most significant first
            let mut i = self.factors.len();
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < self.factors[i] {
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    /// Element set generated by `gens`, by closure. Errors above the cap.
    pub fn span(&self, gens: &[GroupElement], cap: Int) -> Result<BTreeSet<GroupElement>> {
        let mut set = BTreeSet::new();
        set.insert(self.zero());
        let mut frontier = vec![self.zero()];
        while let Some(x) = frontier.pop() {
            for g in gens {
                let y = self.add(&x, g);
                if set.insert(y.clone()) {
                    if set.len() as Int > cap {
                        return Err(Error::EnumerationCap {
                            order: self.order(),
                            cap,
                        });
                    }
                    frontier.push(y);
                }
            }
        }
        Ok(set)
    }

    /// Order of the subgroup generated by `gens`.
    ///
    /// Closed forms cover the cyclic case and coordinate-aligned generators;
    /// otherwise the span is enumerated under the cap.
    pub fn subgroup_order(&self, gens: &[GroupElement], cap: Int) -> Result<Int> {
        if gens.is_empty() {
            return Ok(1);
        }
        if self.factors.len() == 1 {
            // subgroup of Z/m generated by residues r_i is <gcd(m, r_1, ..)>
            let m = self.factors[0];
            let d = gens.iter().fold(m, |acc, g| gcd(acc, g.residues[0]));
            return Ok(m / d);
        }
        if gens
            .iter()
            .all(|g| g.residues.iter().filter(|&&r| r != 0).count() <= 1)
        {
            // coordinate-aligned: the span is the product of per-coordinate
            // cyclic subgroups, each of order lcm of the element orders there
            let mut order: Int = 1;
            for (i, &f) in self.factors.iter().enumerate() {
                let per = gens
                    .iter()
                    .map(|g| f / gcd(g.residues[i], f))
                    .fold(1, lcm);
                order *= per;
            }
            return Ok(order);
        }
        Ok(self.span(gens, cap)?.len() as Int)
    }

    /// Generators of the join H + K (the subgroup generated by H union K).
    pub fn subgroup_join(&self, h: &[GroupElement], k: &[GroupElement]) -> Vec<GroupElement> {
        let mut gens: Vec<GroupElement> = h.to_vec();
        gens.extend_from_slice(k);
        gens
    }

    /// Membership check for a generated subgroup, under the cap.
    pub fn subgroup_contains(
        &self,
        gens: &[GroupElement],
        x: &GroupElement,
        cap: Int,
    ) -> Result<bool> {
        if self.factors.len() == 1 {
            let m = self.factors[0];
            let d = gens.iter().fold(m, |acc, g| gcd(acc, g.residues[0]));
            return Ok(x.residues[0] % d == 0);
        }
        Ok(self.span(gens, cap)?.contains(x))
    }

    /// Canonical coset representatives of the subgroup generated by `gens`,
    /// one per coset: the lexicographically least element of each coset,
    /// sorted lexicographically. The identity coset is always index 0.
    pub fn cosets(&self, gens: &[GroupElement], cap: Int) -> Result<Vec<GroupElement>> {
        if self.factors.len() == 1 {
            let m = self.factors[0];
            let d = gens.iter().fold(m, |acc, g| gcd(acc, g.residues[0]));
            // subgroup is <d>; reps are 0..d-1
            if d > cap {
                return Err(Error::EnumerationCap { order: d, cap });
            }
            return Ok((0..d)
                .map(|r| GroupElement { residues: vec![r] })
                .collect());
        }
        let order = self.order();
        if order > cap {
            return Err(Error::EnumerationCap { order, cap });
        }
        let sub = self.span(gens, cap)?;
        let mut reps = BTreeSet::new();
        for x in self.enumerate(cap)? {
            let least = sub
                .iter()
                .map(|s| self.sub(&x, s))
                .min()
                .expect("subgroup nonempty");
            reps.insert(least);
        }
        Ok(reps.into_iter().collect())
    }

    /// Double cosets H\G/K. Since G is abelian these are the cosets of H + K.
    pub fn double_cosets(
        &self,
        h: &[GroupElement],
        k: &[GroupElement],
        cap: Int,
    ) -> Result<DoubleCosets> {
        let join = self.subgroup_join(h, k);
        let count = self.order() / self.subgroup_order(&join, cap)?;
        let reps = self.cosets(&join, cap)?;
        debug_assert_eq!(reps.len() as Int, count);
        Ok(DoubleCosets {
            reps,
            identity_index: 0,
            count,
        })
    }

    /// Number of double cosets H\G/K, available even above the element cap
    /// when the join order has a closed form.
    pub fn double_coset_count(
        &self,
        h: &[GroupElement],
        k: &[GroupElement],
        cap: Int,
    ) -> Result<Int> {
        let join = self.subgroup_join(h, k);
        Ok(self.order() / self.subgroup_order(&join, cap)?)
    }
}

fn mul_mod(a: Int, b: Int, m: Int) -> Int {
    // schoolbook double-and-add; orders stay far below 2^127 in practice
    let mut acc: Int = 0;
    let mut a = a % m;
    let mut b = b % m;
    while b > 0 {
        if b & 1 == 1 {
            acc = (acc + a) % m;
        }
        a = (a + a) % m;
        b >>= 1;
    }
    acc
}

/// Representatives of the double cosets H\G/K, lexicographically least per
/// class, sorted. The class of the identity is flagged by index.
#[derive(Clone, Debug)]
pub struct DoubleCosets {
    pub reps: Vec<GroupElement>,
    pub identity_index: usize,
    pub count: Int,
}

/// An injective homomorphism between finite abelian groups, given by the
/// images of the source generators (one per invariant factor).
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Monomorphism {
    source: FiniteAbelianGroup,
    target: FiniteAbelianGroup,
    images: Vec<GroupElement>,
}

impl Monomorphism {
    pub fn new(
        source: FiniteAbelianGroup,
        target: FiniteAbelianGroup,
        images: Vec<GroupElement>,
        cap: Int,
    ) -> Result<Self> {
        if images.len() != source.factors().len() {
            return Err(Error::NotInjective(format!(
                "expected {} generator images, got {}",
                source.factors().len(),
                images.len()
            )));
        }
        for img in &images {
            if target.element(img.residues.clone()).is_err() {
                return Err(Error::UnreducedElement);
            }
        }
        // well-defined: the image of each generator must be killed by the
        // generator's order
        for (img, &f) in images.iter().zip(source.factors()) {
            if target.element_order(img) == 0 || f % target.element_order(img) != 0 {
                return Err(Error::NotInjective(format!(
                    "image order {} does not divide source factor {}",
                    target.element_order(img),
                    f
                )));
            }
        }
        // injective iff the image subgroup has full source order
        let image_order = target.subgroup_order(&images, cap)?;
        if image_order != source.order() {
            return Err(Error::NotInjective(format!(
                "image order {} != source order {}",
                image_order,
                source.order()
            )));
        }
        Ok(Self {
            source,
            target,
            images,
        })
    }

    pub fn identity(group: FiniteAbelianGroup) -> Self {
        let images = (0..group.factors().len())
            .map(|i| {
                let mut r = vec![0; group.factors().len()];
                r[i] = 1;
                GroupElement { residues: r }
            })
            .collect();
        Self {
            source: group.clone(),
            target: group,
            images,
        }
    }

    pub fn source(&self) -> &FiniteAbelianGroup {
        &self.source
    }

    pub fn target(&self) -> &FiniteAbelianGroup {
        &self.target
    }

    /// Images of the source generators; these generate the image subgroup.
    pub fn image_gens(&self) -> &[GroupElement] {
        &self.images
    }

    /// Index of the image in the target.
    pub fn index(&self) -> Int {
        self.target.order() / self.source.order()
    }

    pub fn apply(&self, g: &GroupElement) -> GroupElement {
        let mut acc = self.target.zero();
        for (&r, img) in g.residues.iter().zip(&self.images) {
            acc = self.target.add(&acc, &self.target.scalar_mul(r, img));
        }
        acc
    }

    /// Inverse map on the image, as a lookup table. Element mode only.
    pub fn image_to_source(&self, cap: Int) -> Result<HashMap<GroupElement, GroupElement>> {
        let mut map = HashMap::new();
        for g in self.source.enumerate(cap)? {
            map.insert(self.apply(&g), g);
        }
        Ok(map)
    }

    pub fn compose(&self, outer: &Monomorphism) -> Result<Monomorphism> {
        if outer.source != self.target {
            return Err(Error::InvalidGroup(
                "composition mismatch: outer source != inner target".into(),
            ));
        }
        let images = self.images.iter().map(|g| outer.apply(g)).collect();
        Ok(Monomorphism {
            source: self.source.clone(),
            target: outer.target.clone(),
            images,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(n: Int) -> FiniteAbelianGroup {
        FiniteAbelianGroup::cyclic(n).unwrap()
    }

    fn el(g: &FiniteAbelianGroup, r: &[Int]) -> GroupElement {
        g.element(r.to_vec()).unwrap()
    }

    #[test]
    fn join_with_trivial_subgroup() {
        let g = z(4);
        let h = vec![el(&g, &[2])];
        let join = g.subgroup_join(&h, &[]);
        let span = g.span(&join, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(span.len(), 2);
        assert!(span.contains(&el(&g, &[2])));
    }

    #[test]
    fn join_is_idempotent() {
        let g = z(4);
        let h = vec![el(&g, &[2])];
        let join = g.subgroup_join(&h, &h);
        assert_eq!(g.subgroup_order(&join, DEFAULT_ENUM_CAP).unwrap(), 2);
    }

    #[test]
    fn join_of_generators_of_z6() {
        // <2> and <3> generate all of Z/6: enumeration oracle over 6 elements
        let g = z(6);
        let join = g.subgroup_join(&[el(&g, &[2])], &[el(&g, &[3])]);
        let span = g.span(&join, DEFAULT_ENUM_CAP).unwrap();
        let all: BTreeSet<_> = g.enumerate(DEFAULT_ENUM_CAP).unwrap().into_iter().collect();
        assert_eq!(span, all);
    }

    #[test]
    fn double_cosets_z4() {
        let g = z(4);
        let h = vec![el(&g, &[2])];
        let dc = g.double_cosets(&h, &[], DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(dc.count, 2);
        assert_eq!(dc.reps, vec![el(&g, &[0]), el(&g, &[1])]);
        assert_eq!(dc.identity_index, 0);
    }

    #[test]
    fn double_cosets_q_squared_enumeration_oracle() {
        // G = Z/q^2, H = K = <q> of order q: q classes, checked by brute force
        let q: Int = 3;
        let g = z(q * q);
        let h = vec![el(&g, &[q])];
        let dc = g.double_cosets(&h, &h, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(dc.count, q);
        // brute-force: partition all elements by coset of span(h)
        let span = g.span(&h, DEFAULT_ENUM_CAP).unwrap();
        let mut seen = BTreeSet::new();
        for x in g.enumerate(DEFAULT_ENUM_CAP).unwrap() {
            let least = span.iter().map(|s| g.sub(&x, s)).min().unwrap();
            seen.insert(least);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), dc.reps);
    }

    #[test]
    fn double_cosets_full_subgroup() {
        let g = z(12);
        let h = vec![el(&g, &[1])];
        let dc = g.double_cosets(&h, &[el(&g, &[4])], DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(dc.count, 1);
    }

    #[test]
    fn identity_mono_has_index_one() {
        let q: Int = 5;
        let m = Monomorphism::identity(z(q));
        assert_eq!(m.index(), 1);
    }

    #[test]
    fn times_q_mono_has_index_q() {
        // Z/q^n -> Z/q^{n+1} sending the generator to q * generator
        let q: Int = 3;
        for n in 1..4u32 {
            let src = z(q.pow(n));
            let tgt = z(q.pow(n + 1));
            let img = el(&tgt, &[q]);
            let m = Monomorphism::new(src, tgt, vec![img], DEFAULT_ENUM_CAP).unwrap();
            assert_eq!(m.index(), q);
        }
    }

    #[test]
    fn trivial_to_cyclic_index_is_order() {
        let q: Int = 4;
        let m = Monomorphism::new(
            FiniteAbelianGroup::trivial(),
            z(q + 1),
            vec![],
            DEFAULT_ENUM_CAP,
        )
        .unwrap();
        // forced by the order ratio; oracle = direct count of the target
        assert_eq!(m.index(), z(q + 1).enumerate(DEFAULT_ENUM_CAP).unwrap().len() as Int);
    }

    #[test]
    fn non_injective_images_rejected() {
        let src = z(4);
        let tgt = z(8);
        // generator of order 4 mapped to an element of order 2
        let img = el(&tgt, &[4]);
        assert!(Monomorphism::new(src, tgt, vec![img], DEFAULT_ENUM_CAP).is_err());
    }

    #[test]
    fn unreduced_element_rejected() {
        let g = z(4);
        assert!(g.element(vec![4]).is_err());
        assert!(g.element(vec![1, 0]).is_err());
    }

    #[test]
    fn index_multiplicative_under_composition() {
        let q: Int = 2;
        let a = Monomorphism::new(z(q), z(q * q), vec![el(&z(q * q), &[q])], DEFAULT_ENUM_CAP)
            .unwrap();
        let b = Monomorphism::new(
            z(q * q),
            z(q * q * q),
            vec![el(&z(q * q * q), &[q])],
            DEFAULT_ENUM_CAP,
        )
        .unwrap();
        let c = a.compose(&b).unwrap();
        assert_eq!(c.index(), a.index() * b.index());
    }

    #[test]
    fn coordinate_aligned_subgroup_order() {
        // Z/2 x Z/9, generators (1,0) and (0,3): order 2 * 3 = 6
        let g = FiniteAbelianGroup::new(vec![2, 9]).unwrap();
        let gens = vec![el(&g, &[1, 0]), el(&g, &[0, 3])];
        assert_eq!(g.subgroup_order(&gens, DEFAULT_ENUM_CAP).unwrap(), 6);
        // and it agrees with the closure
        assert_eq!(g.span(&gens, DEFAULT_ENUM_CAP).unwrap().len(), 6);
    }

    #[test]
    fn cyclic_cosets_above_cap_still_work() {
        // orders above the cap with cyclic closed form
        let g = z(1 << 40);
        let h = vec![el(&g, &[1 << 20])];
        assert_eq!(g.subgroup_order(&h, DEFAULT_ENUM_CAP).unwrap(), 1 << 20);
        assert_eq!(
            g.double_coset_count(&h, &h, DEFAULT_ENUM_CAP).unwrap(),
            1 << 20
        );
    }

    proptest::proptest! {
        #[test]
        fn double_coset_partition(order in 2u128..60, h_gen in 0u128..60, k_gen in 0u128..60) {
            let g = z(order);
            let h = vec![g.reduce(&[h_gen])];
            let k = vec![g.reduce(&[k_gen])];
            let dc = g.double_cosets(&h, &k, DEFAULT_ENUM_CAP).unwrap();
            let join = g.subgroup_join(&h, &k);
            let join_order = g.subgroup_order(&join, DEFAULT_ENUM_CAP).unwrap();
            // count identity
            proptest::prop_assert_eq!(dc.count, g.order() / join_order);
            // classes partition G
            let span = g.span(&join, DEFAULT_ENUM_CAP).unwrap();
            let mut covered = BTreeSet::new();
            for rep in &dc.reps {
                for s in &span {
                    covered.insert(g.add(rep, s));
                }
            }
            proptest::prop_assert_eq!(covered.len() as Int, g.order());
        }
    }
}
