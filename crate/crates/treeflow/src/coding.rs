//! The countable-state coding of the discrete geodesic flow: the alphabet
//! of triples (e-, h, e+), the transition structure, encoding and decoding
//! of cover geodesics, the symbolic potential, a Markov-order test and the
//! Gurevich pressure.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;
use serde_json::json;

use crate::algebra::{GroupElement, Int};
use crate::cover::{CoverVertex, Step};
use crate::error::{Error, Result};
use crate::lattice::{EdgeId, GraphOfGroups, VertexId};
use crate::numeric::{chi_square_p_value, linear_fit};
use crate::thermo::Conductances;

/// A coding letter: cross the lift of e- into t(e-), shift by the double
/// class h of rho_{e-}(G_{e-}) \ G_{t(e-)} / rho_{e+~}(G_{e+}), leave along
/// a lift of e+. Since the groups are abelian the double classes are the
/// cosets of the subgroup join.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Letter {
    pub e_minus: EdgeId,
    pub e_plus: EdgeId,
    /// Index of the class among the canonical representatives; the identity
    /// class has index 0 and is forbidden for turn letters.
    pub class_index: usize,
    /// Residues of the canonical (lexicographically least) representative.
    pub h_rep: Vec<Int>,
}

/// How classes and coset representatives are computed at one (e-, e+) pair.
enum ClassMode {
    /// The join is the whole vertex group: a single class.
    Single,
    /// Cyclic vertex group: the class of x is x mod d (d = index of the
    /// join) and H- and K-coset representatives are plain residues.
    Cyclic { d: Int },
    /// Explicit element tables under the enumeration cap.
    Elements {
        class_of: HashMap<GroupElement, usize>,
        class_reps: Vec<GroupElement>,
        in_reps: Vec<GroupElement>,
        out_reps: Vec<GroupElement>,
        out_coset_of: HashMap<GroupElement, usize>,
    },
}

struct PairClasses {
    turn: bool,
    n_classes: Int,
    /// Number of geodesic continuations (right K-cosets) collapsed into one
    /// double class: |H+K| / |K|. Periodic letter words undercount periodic
    /// flow orbits by exactly this factor per letter.
    orbit_mult: Int,
    mode: ClassMode,
}

pub struct Alphabet {
    pub letters: Vec<Letter>,
    lookup: HashMap<(usize, usize, usize), usize>,
    pairs: HashMap<(usize, usize), PairClasses>,
    by_e_minus: HashMap<usize, Vec<usize>>,
    /// Vertices whose letters were omitted because class data exceeded the
    /// enumeration cap.
    pub skipped_vertices: Vec<String>,
}

fn build_pair(gog: &GraphOfGroups, e_minus: EdgeId, e_plus: EdgeId) -> Result<Option<PairClasses>> {
    let g = gog.graph();
    let v = g.terminus(e_minus);
    let group = gog.vertex_group(v);
    let cap = gog.cap();
    let h_gens = gog.rho_into_terminus(e_minus).image_gens();
    let k_gens = gog.rho_into_origin(e_plus).image_gens();
    let turn = e_plus == g.opposite(e_minus);
    let n_classes = group.double_coset_count(&group.subgroup_join(h_gens, k_gens), &[], cap)?;
    let orbit_mult = gog.index_at_origin(e_plus) / n_classes;
    if n_classes == 1 {
        return Ok(Some(PairClasses {
            turn,
            n_classes,
            orbit_mult,
            mode: ClassMode::Single,
        }));
    }
    if group.is_cyclic() {
        return Ok(Some(PairClasses {
            turn,
            n_classes,
            orbit_mult,
            mode: ClassMode::Cyclic { d: n_classes },
        }));
    }
    if group.order() > cap || n_classes > cap {
        return Ok(None);
    }
    let dc = group.double_cosets(h_gens, k_gens, cap)?;
    let join = group.subgroup_join(h_gens, k_gens);
    let join_elems = group.span(&join, cap)?;
    let mut class_of = HashMap::new();
    for (i, rep) in dc.reps.iter().enumerate() {
        for j in &join_elems {
            class_of.insert(group.add(rep, j), i);
        }
    }
    let in_reps = group.cosets(h_gens, cap)?;
    let out_reps = group.cosets(k_gens, cap)?;
    let k_elems = group.span(k_gens, cap)?;
    let mut out_coset_of = HashMap::new();
    for (i, rep) in out_reps.iter().enumerate() {
        for j in &k_elems {
            out_coset_of.insert(group.add(rep, j), i);
        }
    }
    Ok(Some(PairClasses {
        turn,
        n_classes,
        orbit_mult,
        mode: ClassMode::Elements {
            class_of,
            class_reps: dc.reps,
            in_reps,
            out_reps,
            out_coset_of,
        },
    }))
}

/// Build every letter of the finite truncation. Letters whose class data
/// exceeds the cap are omitted and the vertex is flagged.
pub fn build_alphabet(gog: &GraphOfGroups) -> Result<Alphabet> {
    let g = gog.graph();
    let mut letters = Vec::new();
    let mut pairs = HashMap::new();
    let mut skipped = Vec::new();
    for v in g.vertices() {
        let mut vertex_ok = true;
        for &f in g.edges_from(v) {
            let e_minus = g.opposite(f);
            for &e_plus in g.edges_from(v) {
                match build_pair(gog, e_minus, e_plus)? {
                    Some(pc) => {
                        let rank = gog.vertex_group(v).factors().len().max(1);
                        for j in 0..pc.n_classes as usize {
                            if pc.turn && j == 0 {
                                continue;
                            }
                            let h_rep = match &pc.mode {
                                ClassMode::Single => vec![0; rank],
                                ClassMode::Cyclic { .. } => vec![j as Int],
                                ClassMode::Elements { class_reps, .. } => {
                                    class_reps[j].residues().to_vec()
                                }
                            };
                            letters.push(Letter {
                                e_minus,
                                e_plus,
                                class_index: j,
                                h_rep,
                            });
                        }
                        pairs.insert((e_minus.0, e_plus.0), pc);
                    }
                    None => vertex_ok = false,
                }
            }
        }
        if !vertex_ok {
            skipped.push(g.vertex_name(v).to_string());
        }
    }
    // stable ids: lexicographic in (e-, h_rep, e+)
    letters.sort_by(|a, b| {
        (a.e_minus.0, &a.h_rep, a.e_plus.0).cmp(&(b.e_minus.0, &b.h_rep, b.e_plus.0))
    });
    let lookup = letters
        .iter()
        .enumerate()
        .map(|(i, l)| ((l.e_minus.0, l.class_index, l.e_plus.0), i))
        .collect();
    let mut by_e_minus: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, l) in letters.iter().enumerate() {
        by_e_minus.entry(l.e_minus.0).or_default().push(i);
    }
    Ok(Alphabet {
        letters,
        lookup,
        pairs,
        by_e_minus,
        skipped_vertices: skipped,
    })
}

impl Alphabet {
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letter(&self, id: usize) -> &Letter {
        &self.letters[id]
    }

    pub fn id_of(&self, e_minus: EdgeId, class_index: usize, e_plus: EdgeId) -> Option<usize> {
        self.lookup.get(&(e_minus.0, class_index, e_plus.0)).copied()
    }

    /// Transition rule: a -> b is admissible iff a.e_plus = b.e_minus.
    pub fn admissible(&self, a: usize, b: usize) -> bool {
        self.letters[a].e_plus == self.letters[b].e_minus
    }

    /// Successors of a letter; always a finite row.
    pub fn successors(&self, a: usize) -> &[usize] {
        self.by_e_minus
            .get(&self.letters[a].e_plus.0)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Predecessors of a letter; always a finite column.
    pub fn predecessors(&self, b: usize) -> Vec<usize> {
        let target = self.letters[b].e_minus;
        (0..self.letters.len())
            .filter(|&a| self.letters[a].e_plus == target)
            .collect()
    }

    /// Letters whose crossing vertex t(e-) lies in the given vertex set.
    pub fn window(&self, gog: &GraphOfGroups, vertices: &[VertexId]) -> Vec<usize> {
        (0..self.letters.len())
            .filter(|&i| vertices.contains(&gog.graph().terminus(self.letters[i].e_minus)))
            .collect()
    }

    /// Number of periodic flow orbits represented by one occurrence of this
    /// letter in a periodic word: the right K-cosets inside its double class.
    pub fn orbit_multiplicity(&self, id: usize) -> Int {
        let l = &self.letters[id];
        self.pairs
            .get(&(l.e_minus.0, l.e_plus.0))
            .map(|p| p.orbit_mult)
            .unwrap_or(1)
    }

    /// Whether the letter reverses direction: e+ is the opposite of e-.
    pub fn is_turn(&self, id: usize) -> bool {
        let l = &self.letters[id];
        self.pairs
            .get(&(l.e_minus.0, l.e_plus.0))
            .map(|p| p.turn)
            .unwrap_or(false)
    }

    /// Conditional probability of this letter among continuations sharing its
    /// in-direction and out-edge: the lifts of e+ inside its class over the
    /// non-backtracking lifts of e+. Lifts within a pair carry equal mass
    /// because sibling cones are deck-isomorphic, so these fractions sum to 1
    /// over the admissible classes of each (e-, e+) pair.
    pub fn letter_fraction(&self, gog: &GraphOfGroups, id: usize) -> f64 {
        let l = &self.letters[id];
        let Some(pc) = self.pairs.get(&(l.e_minus.0, l.e_plus.0)) else {
            return 1.0;
        };
        let avail = gog.index_at_origin(l.e_plus) - pc.turn as Int;
        pc.orbit_mult as f64 / avail as f64
    }

    /// Number of letters refining the (e-, e+) pair of this letter: the
    /// admissible double classes of the crossing.
    pub fn refinement_count(&self, id: usize) -> usize {
        let l = &self.letters[id];
        self.pairs
            .get(&(l.e_minus.0, l.e_plus.0))
            .map(|p| (p.n_classes - p.turn as Int) as usize)
            .unwrap_or(1)
    }

    fn pair(&self, e_minus: EdgeId, e_plus: EdgeId) -> Result<&PairClasses> {
        self.pairs
            .get(&(e_minus.0, e_plus.0))
            .ok_or_else(|| Error::ElementMode("letters omitted for this pair (cap)".into()))
    }

    /// Class of the crossing with the given in- and out-coset indices.
    /// `c_in` is None when the trajectory arrives along the parent lift
    /// (representative 0), likewise `c_out` for a departure to the parent.
    fn class_of_crossing(
        &self,
        gog: &GraphOfGroups,
        e_minus: EdgeId,
        e_plus: EdgeId,
        c_in: Option<usize>,
        c_out: Option<usize>,
    ) -> Result<usize> {
        let pc = self.pair(e_minus, e_plus)?;
        match &pc.mode {
            ClassMode::Single => Ok(0),
            ClassMode::Cyclic { d } => {
                let r_in = c_in.unwrap_or(0) as Int % d;
                let r_out = c_out.unwrap_or(0) as Int % d;
                Ok(((r_out + d - r_in) % d) as usize)
            }
            ClassMode::Elements {
                class_of,
                in_reps,
                out_reps,
                ..
            } => {
                let group = gog.vertex_group(gog.graph().terminus(e_minus));
                let zero = group.zero();
                let a = c_in.map(|c| &in_reps[c]).unwrap_or(&zero);
                let b = c_out.map(|c| &out_reps[c]).unwrap_or(&zero);
                let x = group.sub(b, a);
                Ok(*class_of.get(&x).expect("class table covers the group"))
            }
        }
    }

    /// Out-coset realizing a class when the arrival is along the parent
    /// lift (in-representative 0), as in decoded canonical paths.
    fn out_coset_for_class(
        &self,
        e_minus: EdgeId,
        e_plus: EdgeId,
        c_in: Option<usize>,
        class: usize,
    ) -> Result<usize> {
        let pc = self.pair(e_minus, e_plus)?;
        match &pc.mode {
            ClassMode::Single => Ok(0),
            ClassMode::Cyclic { d } => {
                // any representative of r_in + class works; reduce into the
                // K-coset range afterwards via the caller's modulus
                let r_in = c_in.unwrap_or(0) as Int % d;
                Ok(((r_in + class as Int) % d) as usize)
            }
            ClassMode::Elements {
                class_reps,
                in_reps,
                out_coset_of,
                ..
            } => {
                let rep = &class_reps[class];
                match c_in {
                    None => Ok(*out_coset_of.get(rep).expect("table covers the group")),
                    Some(c) => {
                        let group_rep = &in_reps[c];
                        // need an element of group to add; recover the group
                        // from any rep's length is not possible here, so the
                        // caller passes c_in = None on canonical decode paths
                        let _ = group_rep;
                        Err(Error::ElementMode(
                            "decode after descent needs the vertex group; handled by decode_step"
                                .into(),
                        ))
                    }
                }
            }
        }
    }
}

/// The symbolic potential: the conductance of the first edge followed, e+.
pub fn f_symb(alphabet: &Alphabet, conds: &Conductances, letter: usize) -> f64 {
    conds.get(alphabet.letters[letter].e_plus)
}

/// Distance on symbol sequences: exp(-n) where n is the length of the
/// longest common prefix.
pub fn shift_distance(a: &[usize], b: &[usize]) -> f64 {
    let n = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    if n == a.len() && n == b.len() {
        0.0
    } else {
        (-(n as f64)).exp()
    }
}

/// Encode a cover geodesic (list of successive vertices) into letters, one
/// per interior vertex.
pub fn encode(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    path: &[CoverVertex],
) -> Result<Vec<usize>> {
    if path.len() < 3 {
        return Ok(vec![]);
    }
    let g = gog.graph();
    let mut out = Vec::with_capacity(path.len() - 2);
    for i in 1..path.len() - 1 {
        let (prev, cur, next) = (&path[i - 1], &path[i], &path[i + 1]);
        // arrival
        let (e_minus, c_in) = if cur.depth() == prev.depth() + 1 {
            (cur.steps.last().unwrap().edge, None)
        } else if prev.depth() == cur.depth() + 1 {
            let s = prev.steps.last().unwrap();
            (g.opposite(s.edge), Some(s.coset))
        } else {
            return Err(Error::BadParameter("not a geodesic chain".into()));
        };
        // departure
        let (e_plus, c_out) = if next.depth() == cur.depth() + 1 {
            let s = next.steps.last().unwrap();
            (s.edge, Some(s.coset))
        } else if cur.depth() == next.depth() + 1 {
            (g.opposite(cur.steps.last().unwrap().edge), None)
        } else {
            return Err(Error::BadParameter("not a geodesic chain".into()));
        };
        let class = alphabet.class_of_crossing(gog, e_minus, e_plus, c_in, c_out)?;
        let id = alphabet
            .id_of(e_minus, class, e_plus)
            .ok_or_else(|| Error::ElementMode("letter missing from alphabet".into()))?;
        out.push(id);
    }
    Ok(out)
}

/// Encode an address (an ascending trajectory from the base) without
/// materializing prefix vertices. One letter per interior step.
pub fn encode_address(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    steps: &[Step],
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(steps.len().saturating_sub(1));
    for w in steps.windows(2) {
        let class = alphabet.class_of_crossing(
            gog,
            w[0].edge,
            w[1].edge,
            None,
            Some(w[1].coset),
        )?;
        let id = alphabet
            .id_of(w[0].edge, class, w[1].edge)
            .ok_or_else(|| Error::ElementMode("letter missing from alphabet".into()))?;
        out.push(id);
    }
    Ok(out)
}

/// Shortest lift of a quotient vertex with all cosets 0.
pub fn canonical_lift(gog: &GraphOfGroups, v: VertexId) -> CoverVertex {
    let g = gog.graph();
    let mut parent_edge: Vec<Option<EdgeId>> = vec![None; g.n_vertices()];
    let mut seen = vec![false; g.n_vertices()];
    seen[gog.base().0] = true;
    let mut queue = VecDeque::from([gog.base()]);
    while let Some(u) = queue.pop_front() {
        if u == v {
            break;
        }
        for &e in g.edges_from(u) {
            let w = g.terminus(e);
            if !seen[w.0] {
                seen[w.0] = true;
                parent_edge[w.0] = Some(e);
                queue.push_back(w);
            }
        }
    }
    let mut rev = Vec::new();
    let mut at = v;
    while let Some(e) = parent_edge[at.0] {
        rev.push(Step { edge: e, coset: 0 });
        at = g.origin(e);
    }
    rev.reverse();
    CoverVertex { steps: rev }
}

/// Decode a letter word into a cover geodesic realizing it. The inverse of
/// the coding up to deck transformations: encode(decode(w)) = w.
pub fn decode(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    word: &[usize],
) -> Result<Vec<CoverVertex>> {
    if word.is_empty() {
        return Err(Error::BadParameter("empty letter word".into()));
    }
    for w in word.windows(2) {
        if !alphabet.admissible(w[0], w[1]) {
            return Err(Error::BadParameter("word is not admissible".into()));
        }
    }
    let g = gog.graph();
    let first = &alphabet.letters[word[0]];
    let start_q = g.origin(first.e_minus);
    let mut cur = canonical_lift(gog, start_q);
    let mut path = vec![cur.clone()];
    // the first edge has a free coset: take the parent when that is the
    // direction of e-, else the identity lift
    let take = |cur: &CoverVertex, edge: EdgeId, coset: usize| -> CoverVertex {
        match cur.steps.last() {
            Some(last) if edge == g.opposite(last.edge) && coset == 0 => {
                cur.prefix(cur.depth() - 1)
            }
            _ => {
                let mut steps = cur.steps.clone();
                steps.push(Step { edge, coset });
                CoverVertex { steps }
            }
        }
    };
    let mut next = take(&cur, first.e_minus, 0);
    path.push(next.clone());
    for &lid in word {
        let letter = &alphabet.letters[lid];
        // in-direction at the current crossing vertex
        let c_in = if next.depth() > cur.depth() {
            None
        } else {
            Some(cur.steps.last().unwrap().coset)
        };
        let (_prev, at) = (cur, next);
        let c_out_raw = match c_in {
            None | Some(_) if matches!(c_in, None) => {
                alphabet.out_coset_for_class(letter.e_minus, letter.e_plus, None, letter.class_index)?
            }
            _ => {
                // descent case: compute via the crossing class directly
                decode_step_after_descent(gog, alphabet, letter, c_in.unwrap())?
            }
        };
        // reduce into the K-coset range
        let d_k = gog.index_at_origin(letter.e_plus) as usize;
        let c_out = reduce_out_coset(gog, alphabet, letter, c_out_raw, d_k)?;
        let after = take(&at, letter.e_plus, c_out);
        path.push(after.clone());
        cur = at;
        next = after;
    }
    Ok(path)
}

fn reduce_out_coset(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    letter: &Letter,
    raw: usize,
    d_k: usize,
) -> Result<usize> {
    let pc = alphabet.pair(letter.e_minus, letter.e_plus)?;
    match &pc.mode {
        ClassMode::Cyclic { .. } => {
            let group = gog.vertex_group(gog.graph().terminus(letter.e_minus));
            let m = group.order();
            Ok(((raw as Int) % m % d_k as Int) as usize)
        }
        _ => Ok(raw),
    }
}

fn decode_step_after_descent(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    letter: &Letter,
    c_in: usize,
) -> Result<usize> {
    let pc = alphabet.pair(letter.e_minus, letter.e_plus)?;
    match &pc.mode {
        ClassMode::Single => Ok(0),
        ClassMode::Cyclic { d } => Ok(((c_in as Int % d + letter.class_index as Int) % d) as usize),
        ClassMode::Elements {
            class_reps,
            in_reps,
            out_coset_of,
            ..
        } => {
            let group = gog.vertex_group(gog.graph().terminus(letter.e_minus));
            let x = group.add(&in_reps[c_in], &class_reps[letter.class_index]);
            Ok(*out_coset_of.get(&x).expect("table covers the group"))
        }
    }
}

// ---------------------------------------------------------------------------
// symbolic diagnostics
// ---------------------------------------------------------------------------

/// Breadth-first admissible word from letter a to letter b (inclusive), at
/// most max_len letters long.
pub fn transitive_witness(
    alphabet: &Alphabet,
    a: usize,
    b: usize,
    max_len: usize,
) -> Option<Vec<usize>> {
    if a == b {
        return Some(vec![a]);
    }
    let mut prev: HashMap<usize, usize> = HashMap::new();
    let mut frontier = vec![a];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for &x in &frontier {
            for &y in alphabet.successors(x) {
                if y != a && !prev.contains_key(&y) {
                    prev.insert(y, x);
                    if y == b {
                        let mut word = vec![b];
                        let mut at = b;
                        while at != a {
                            at = prev[&at];
                            word.push(at);
                        }
                        word.reverse();
                        return Some(word);
                    }
                    next.push(y);
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        frontier = next;
    }
    None
}

/// gcd of lengths of closed admissible letter words up to l_max, or None.
pub fn letter_loop_gcd(alphabet: &Alphabet, l_max: usize) -> Option<u64> {
    let n = alphabet.len();
    if n == 0 {
        return None;
    }
    let words = n.div_ceil(64);
    let mut adj = vec![0u64; n * words];
    for a in 0..n {
        for &b in alphabet.successors(a) {
            adj[a * words + b / 64] |= 1 << (b % 64);
        }
    }
    let mut power = adj.clone();
    let mut g: u64 = 0;
    for l in 1..=l_max {
        if l > 1 {
            let mut next = vec![0u64; n * words];
            for row in 0..n {
                for mid in 0..n {
                    if power[row * words + mid / 64] >> (mid % 64) & 1 == 1 {
                        for w in 0..words {
                            next[row * words + w] |= adj[mid * words + w];
                        }
                    }
                }
            }
            power = next;
        }
        if (0..n).any(|a| power[a * words + a / 64] >> (a % 64) & 1 == 1) {
            g = crate::algebra::gcd(g as Int, l as Int) as u64;
            if g == 1 {
                return Some(1);
            }
        }
    }
    if g == 0 {
        None
    } else {
        Some(g)
    }
}

/// Mass of a symbolic cylinder [x_0 .. x_{n-1}]: the mass of a single lift of
/// the quotient edge path, counted once per deck class of lifts realizing the
/// word, so each crossing contributes its orbit multiplicity.
pub fn symbolic_cylinder_mass(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    conds: &Conductances,
    s: f64,
    radius: usize,
    word: &[usize],
) -> Result<f64> {
    let path = decode(gog, alphabet, word)?;
    let spec = crate::gibbs::CylinderSpec::from_cover_path(gog, &path)?;
    let mut m = crate::gibbs::cylinder_mass_tilde(gog, conds, s, radius, &spec)?;
    for &x in word {
        m *= alphabet.orbit_multiplicity(x) as f64;
    }
    Ok(m)
}

/// Gibbs property in the symbolic picture: log mass minus the summed symbolic
/// potential is affine in the word length with slope -delta, up to a bounded
/// error whose exponential is the Gibbs constant.
pub fn symbolic_gibbs_check(
    gog: &GraphOfGroups,
    alphabet: &Alphabet,
    conds: &Conductances,
    s: f64,
    radius: usize,
    words: &[Vec<usize>],
) -> Result<crate::gibbs::GibbsCheck> {
    let mut points = Vec::with_capacity(words.len());
    for word in words {
        let m = symbolic_cylinder_mass(gog, alphabet, conds, s, radius, word)?;
        if m <= 0.0 {
            return Err(Error::Other("symbolic cylinder of zero mass".into()));
        }
        // the effective symbolic potential carries the log multiplicity of
        // deck classes alongside the conductance term
        let pot: f64 = word
            .iter()
            .map(|&x| f_symb(alphabet, conds, x) + (alphabet.orbit_multiplicity(x) as f64).ln())
            .sum();
        points.push((word.len(), m.ln() - pot));
    }
    let xs: Vec<f64> = points.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::BadParameter("need words of at least two lengths".into()))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - (fit.slope * x + fit.intercept);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(crate::gibbs::GibbsCheck {
        points,
        fit,
        log_constant: (hi - lo) / 2.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GurevichEstimate {
    /// (n, (1/n) log weighted closed word count) at each usable length.
    pub estimates: Vec<(usize, f64)>,
    /// Slope-based estimate over the trailing half window.
    pub pressure: f64,
}

/// Gurevich pressure at a letter w: growth rate of the weighted count of
/// periodic flow orbits through w. A closed letter word stands for a whole
/// family of deck-inequivalent closed geodesics; each letter contributes
/// its orbit multiplicity, the number of geodesic continuations its double
/// class collapses. Counting bare words instead systematically
/// underestimates the pressure.
pub fn gurevich_pressure(
    alphabet: &Alphabet,
    conds: &Conductances,
    w: usize,
    n_max: usize,
) -> Result<GurevichEstimate> {
    let n = alphabet.len();
    let weight: Vec<f64> = (0..n)
        .map(|i| {
            alphabet.orbit_multiplicity(i) as f64 * f_symb(alphabet, conds, i).exp()
        })
        .collect();
    let mut x = vec![0.0f64; n];
    x[w] = 1.0;
    let mut estimates = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for step in 1..=n_max {
        let mut next = vec![0.0f64; n];
        for a in 0..n {
            if x[a] == 0.0 {
                continue;
            }
            for &b in alphabet.successors(a) {
                next[b] += x[a] * weight[b];
            }
        }
        x = next;
        if x[w] > 0.0 {
            estimates.push((step, x[w].ln() / step as f64));
            if step >= n_max / 2 {
                xs.push(step as f64);
                ys.push(x[w].ln());
            }
        }
    }
    if estimates.is_empty() {
        return Err(Error::Other("wandering letter: no closed words".into()));
    }
    let pressure = match linear_fit(&xs, &ys) {
        Some(fit) => fit.slope,
        None => estimates.last().map(|(_, v)| *v).unwrap(),
    };
    Ok(GurevichEstimate {
        estimates,
        pressure,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MarkovTestReport {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    pub contexts_used: usize,
    pub triples: usize,
}

/// Chi-square test of the order-1 Markov property against an order-2
/// alternative: within each middle symbol with at least min_obs triples,
/// the previous and next symbols should be independent.
pub fn markov_order_test(seq: &[usize], min_obs: usize) -> Result<MarkovTestReport> {
    if seq.len() < 3 {
        return Err(Error::BadParameter("sequence too short".into()));
    }
    // ordered maps: the statistic is a float accumulation, so the iteration
    // order must be reproducible for byte-identical reruns
    let mut by_mid: BTreeMap<usize, BTreeMap<(usize, usize), usize>> = BTreeMap::new();
    for w in seq.windows(3) {
        *by_mid.entry(w[1]).or_default().entry((w[0], w[2])).or_insert(0) += 1;
    }
    let mut statistic = 0.0;
    let mut dof = 0.0;
    let mut contexts_used = 0;
    let mut triples = 0;
    for table in by_mid.values() {
        let total: usize = table.values().sum();
        if total < min_obs {
            continue;
        }
        let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
        let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
        for (&(a, c), &count) in table {
            *rows.entry(a).or_insert(0) += count;
            *cols.entry(c).or_insert(0) += count;
        }
        if rows.len() < 2 || cols.len() < 2 {
            continue;
        }
        for (&a, &ra) in &rows {
            for (&c, &cc) in &cols {
                let expected = ra as f64 * cc as f64 / total as f64;
                let observed = *table.get(&(a, c)).unwrap_or(&0) as f64;
                statistic += (observed - expected) * (observed - expected) / expected;
            }
        }
        dof += (rows.len() as f64 - 1.0) * (cols.len() as f64 - 1.0);
        contexts_used += 1;
        triples += total;
    }
    if contexts_used == 0 {
        return Err(Error::BadParameter(
            "no context reached the observation threshold".into(),
        ));
    }
    Ok(MarkovTestReport {
        statistic,
        dof,
        p_value: chi_square_p_value(statistic, dof),
        contexts_used,
        triples,
    })
}

/// JSON export of the alphabet and sparse transition matrix.
pub fn alphabet_json(gog: &GraphOfGroups, alphabet: &Alphabet) -> serde_json::Value {
    let g = gog.graph();
    let letters: Vec<serde_json::Value> = alphabet
        .letters
        .iter()
        .enumerate()
        .map(|(i, l)| {
            json!({
                "id": i,
                "e_minus": g.edge_name(l.e_minus),
                "h_rep": l.h_rep,
                "e_plus": g.edge_name(l.e_plus),
            })
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..alphabet.len() {
        for &b in alphabet.successors(a) {
            edges.push(json!([a, b]));
        }
    }
    json!({
        "letters": letters,
        "transitions": edges,
        "skipped_vertices": alphabet.skipped_vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::DEFAULT_ENUM_CAP;
    use crate::cover::{Cover, DeckContext, DeckWord};
    use crate::lattice::{modular_ray, quadratic_growth, trivial_cycle};
    use crate::thermo::amplitude;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn single_loop_has_two_letters() {
        let gog = trivial_cycle(1, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        assert_eq!(alphabet.len(), 2);
        assert!(alphabet.skipped_vertices.is_empty());
    }

    #[test]
    fn modular_ray_window_letter_count() {
        // hand enumeration at v0 and v1 for q = 2:
        //   v0: turn (e0~, e0) with trivial H = K: 3 - 1 = 2 letters
        //   v1: turn (e0, e0~): 1; through (e0, e1): 1; through (e1~, e0~): 1;
        //       turn (e1~, e1): 0
        let gog = modular_ray(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let g = gog.graph();
        let window = alphabet.window(
            &gog,
            &[g.vertex_by_name("v0").unwrap(), g.vertex_by_name("v1").unwrap()],
        );
        assert_eq!(window.len(), 5);
    }

    #[test]
    fn letter_count_matches_brute_force() {
        // independent oracle: enumerate double classes elementwise
        let gog = modular_ray(2, 5, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let g = gog.graph();
        let mut expected = 0usize;
        for v in g.vertices() {
            for &f in g.edges_from(v) {
                let e_minus = g.opposite(f);
                for &e_plus in g.edges_from(v) {
                    let group = gog.vertex_group(v);
                    let dc = group
                        .double_cosets(
                            gog.rho_into_terminus(e_minus).image_gens(),
                            gog.rho_into_origin(e_plus).image_gens(),
                            1 << 20,
                        )
                        .unwrap();
                    let turn = e_plus == g.opposite(e_minus);
                    expected += dc.count as usize - usize::from(turn);
                }
            }
        }
        assert_eq!(alphabet.len(), expected);
    }

    #[test]
    fn rows_and_columns_are_finite_and_consistent() {
        let gog = quadratic_growth(2, 5, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        assert!(alphabet.skipped_vertices.is_empty());
        for a in 0..alphabet.len() {
            for &b in alphabet.successors(a) {
                assert!(alphabet.admissible(a, b));
                assert!(alphabet.predecessors(b).contains(&a));
            }
        }
    }

    fn random_geodesics(
        gog: &GraphOfGroups,
        radius: usize,
        count: usize,
        seed: u64,
    ) -> Vec<Vec<CoverVertex>> {
        let cover = Cover::new(gog);
        let ball = cover.ball(radius);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < count {
            let x = &ball[rng.gen_range(0..ball.len())];
            let y = &ball[rng.gen_range(0..ball.len())];
            if x.distance(y) >= 3 {
                out.push(cover.geodesic(x, y));
            }
        }
        out
    }

    #[test]
    fn encode_decode_roundtrip() {
        for gog in [
            modular_ray(2, 8, DEFAULT_ENUM_CAP).unwrap(),
            quadratic_growth(2, 6, DEFAULT_ENUM_CAP).unwrap(),
        ] {
            let alphabet = build_alphabet(&gog).unwrap();
            for path in random_geodesics(&gog, 5, 40, 3) {
                let word = encode(&gog, &alphabet, &path).unwrap();
                assert_eq!(word.len() + 2, path.len());
                let decoded = decode(&gog, &alphabet, &word).unwrap();
                assert_eq!(decoded.len(), path.len());
                let reword = encode(&gog, &alphabet, &decoded).unwrap();
                assert_eq!(word, reword);
                // decoded paths are geodesics
                assert_eq!(
                    decoded[0].distance(decoded.last().unwrap()),
                    decoded.len() - 1
                );
            }
        }
    }

    #[test]
    fn encode_commutes_with_shift() {
        let gog = modular_ray(3, 8, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        for path in random_geodesics(&gog, 5, 20, 11) {
            if path.len() < 4 {
                continue;
            }
            let full = encode(&gog, &alphabet, &path).unwrap();
            let shifted = encode(&gog, &alphabet, &path[1..]).unwrap();
            assert_eq!(&full[1..], &shifted[..]);
        }
    }

    #[test]
    fn encode_is_deck_invariant() {
        let gog = modular_ray(2, 8, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let ctx = DeckContext::new(&gog);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for path in random_geodesics(&gog, 4, 20, 17) {
            let word = encode(&gog, &alphabet, &path).unwrap();
            for _ in 0..3 {
                let deck: DeckWord = ctx.random_loop(1 + rng.gen_range(0..3), &mut rng).unwrap();
                let moved: Vec<CoverVertex> = path
                    .iter()
                    .map(|v| ctx.apply(&deck, v).unwrap())
                    .collect();
                let word2 = encode(&gog, &alphabet, &moved).unwrap();
                assert_eq!(word, word2);
            }
        }
    }

    #[test]
    fn encode_address_matches_encode() {
        let gog = modular_ray(2, 10, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let cover = Cover::new(&gog);
        let ball = cover.ball(5);
        for v in ball.iter().filter(|v| v.depth() == 5).take(20) {
            let path = cover.geodesic(&CoverVertex::base(), v);
            let a = encode(&gog, &alphabet, &path).unwrap();
            let b = encode_address(&gog, &alphabet, &v.steps).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn f_symb_matches_amplitude_increments() {
        let gog = modular_ray(2, 8, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let mut conds = Conductances::zero(&gog);
        for (i, e) in gog.graph().edges().enumerate() {
            conds.set(e, 0.1 * (i as f64) - 0.3);
        }
        for path in random_geodesics(&gog, 5, 20, 23) {
            let word = encode(&gog, &alphabet, &path).unwrap();
            let sum: f64 = word.iter().map(|&l| f_symb(&alphabet, &conds, l)).sum();
            let total = amplitude(&gog, &conds, &path).unwrap();
            let first = amplitude(&gog, &conds, &path[..2]).unwrap();
            assert!((sum - (total - first)).abs() < 1e-9);
        }
    }

    #[test]
    fn transitivity_in_window() {
        let gog = modular_ray(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let ids: Vec<usize> = (0..alphabet.len()).collect();
        for &a in &ids {
            for &b in &ids {
                let w = transitive_witness(&alphabet, a, b, 40).unwrap_or_else(|| {
                    panic!("no word from {a} to {b}");
                });
                assert!(w.len() <= 40);
                assert_eq!(w[0], a);
                assert_eq!(*w.last().unwrap(), b);
                for pair in w.windows(2) {
                    assert!(alphabet.admissible(pair[0], pair[1]));
                }
            }
        }
    }

    #[test]
    fn letter_gcd_matches_lattice_gcd() {
        let ray = modular_ray(2, 6, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&ray).unwrap();
        assert_eq!(letter_loop_gcd(&alphabet, 12), ray.length_spectrum_gcd(12));
        let qg = quadratic_growth(2, 5, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&qg).unwrap();
        assert_eq!(letter_loop_gcd(&alphabet, 12), Some(1));
        assert_eq!(qg.length_spectrum_gcd(12), Some(1));
    }

    #[test]
    fn orbit_multiplicities_on_modular_ray() {
        // down-continue letters collapse q continuations each; all other
        // letters are faithful. Closed form: |H+K|/|K|.
        let q = 3;
        let gog = modular_ray(q, 6, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let g = gog.graph();
        for id in 0..alphabet.len() {
            let l = alphabet.letter(id);
            let down_continue = g.edge_name(l.e_minus).ends_with('~')
                && g.edge_name(l.e_plus).ends_with('~');
            let expect = if down_continue { q } else { 1 };
            assert_eq!(
                alphabet.orbit_multiplicity(id),
                expect,
                "letter {} -> {}",
                g.edge_name(l.e_minus),
                g.edge_name(l.e_plus)
            );
        }
    }

    #[test]
    fn gurevich_pressure_close_to_ln_q() {
        let gog = modular_ray(2, 12, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let conds = Conductances::zero(&gog);
        // a turn letter at v0 recurs
        let g = gog.graph();
        let e0t = g.edge_by_name("e0~").unwrap();
        let e0 = g.edge_by_name("e0").unwrap();
        let w = alphabet.id_of(e0t, 1, e0).unwrap();
        let est = gurevich_pressure(&alphabet, &conds, w, 20).unwrap();
        assert!(
            (est.pressure - 2.0f64.ln()).abs() < 0.1,
            "pressure {}",
            est.pressure
        );
    }

    #[test]
    fn markov_test_accepts_markov_chains() {
        // an order-1 chain on 3 symbols
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]];
        let mut seq = vec![0usize];
        for _ in 0..50_000 {
            let row = p[*seq.last().unwrap()];
            let x: f64 = rng.gen();
            let next = if x < row[0] {
                0
            } else if x < row[0] + row[1] {
                1
            } else {
                2
            };
            seq.push(next);
        }
        let rep = markov_order_test(&seq, 100).unwrap();
        assert!(rep.p_value > 0.01, "p = {}", rep.p_value);
    }

    #[test]
    fn markov_test_rejects_order_two() {
        // next symbol depends on the previous two
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut seq = vec![0usize, 1];
        for i in 2..50_000 {
            let (a, b) = (seq[i - 2], seq[i - 1]);
            let bias = if a == b { 0.9 } else { 0.2 };
            let x: f64 = rng.gen();
            seq.push(if x < bias { b } else { (b + 1) % 3 });
        }
        let rep = markov_order_test(&seq, 100).unwrap();
        assert!(rep.p_value < 0.01, "p = {}", rep.p_value);
    }

    #[test]
    fn shift_distance_prefix_rule() {
        assert_eq!(shift_distance(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert!((shift_distance(&[1, 2, 3], &[1, 2, 4]) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((shift_distance(&[5], &[6]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alphabet_export_shape() {
        let gog = modular_ray(2, 4, DEFAULT_ENUM_CAP).unwrap();
        let alphabet = build_alphabet(&gog).unwrap();
        let v = alphabet_json(&gog, &alphabet);
        assert_eq!(
            v["letters"].as_array().unwrap().len(),
            alphabet.len()
        );
        assert!(v["transitions"].as_array().unwrap().len() > 0);
        // ids are positional and sorted by (e-, h_rep, e+)
        let ids: Vec<u64> = v["letters"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| l["id"].as_u64().unwrap())
            .collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}
