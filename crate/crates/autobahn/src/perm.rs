//! Exact combinatorial algebra of permutations: composition, restriction,
//! front/back embeddings and coset decomposition.
//!
//! Permutations are stored in one-line notation with 1-based positions:
//! entry `p` of [`Permutation::images`] is the image of `p`. The composition
//! convention is `(a ∘ b)(p) = a(b(p))` — `b` is applied first. In cycle
//! notation (documentation only), `(2 3 1)` is the 3-cycle `1→2→3→1`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PermError {
    #[error("images {images:?} are not a bijection of 1..={degree}")]
    NotABijection { images: Vec<usize>, degree: usize },
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("permutation does not send 1..={size} into the domain index set")]
    Membership { size: usize },
    #[error("permutations induce different index sets on 1..={size}")]
    CosetMismatch { size: usize },
    #[error("embedding target degree {target} is smaller than origin degree {origin}")]
    EmbedDegree { origin: usize, target: usize },
    #[error("index {index} outside ambient range 1..={ambient}")]
    IndexRange { index: usize, ambient: usize },
    #[error("duplicate index {0} in ordered subset")]
    DuplicateIndex(usize),
    #[error("subset size {size} exceeds ambient degree {ambient}")]
    SubsetTooLarge { size: usize, ambient: usize },
}

/// A bijection of `{1..m}` in one-line notation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    images: Vec<usize>,
}

impl std::fmt::Debug for Permutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.images.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl Permutation {
    /// Validates that `images` is a bijection of `{1..m}`.
    pub fn from_images(images: Vec<usize>) -> Result<Self, PermError> {
        let m = images.len();
        let mut seen = vec![false; m];
        for &q in &images {
            if q < 1 || q > m || seen[q - 1] {
                return Err(PermError::NotABijection { images, degree: m });
            }
            seen[q - 1] = true;
        }
        Ok(Self { images })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            images: (1..=m).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    /// Image of the 1-based position `p`.
    pub fn apply(&self, p: usize) -> usize {
        self.images[p - 1]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &q)| q == i + 1)
    }

    /// `(self ∘ other)(p) = self(other(p))`: `other` is applied first.
    pub fn compose(&self, other: &Self) -> Result<Self, PermError> {
        if self.degree() != other.degree() {
            return Err(PermError::DegreeMismatch(self.degree(), other.degree()));
        }
        let images = other.images.iter().map(|&q| self.images[q - 1]).collect();
        Ok(Self { images })
    }

    pub fn inverse(&self) -> Self {
        let mut images = vec![0; self.degree()];
        for (i, &q) in self.images.iter().enumerate() {
            images[q - 1] = i + 1;
        }
        Self { images }
    }

    /// The restricted permutation `σ↓ ∈ S_k` defined by `σ↓(p) = q ⟺ σ(p) = i_q`.
    ///
    /// Requires that `σ` maps `{1..k}` into the domain's index set.
    pub fn restrict(&self, domain: &OrderedSubset) -> Result<Self, PermError> {
        if self.degree() != domain.ambient_degree() {
            return Err(PermError::DegreeMismatch(
                self.degree(),
                domain.ambient_degree(),
            ));
        }
        let k = domain.size();
        let mut images = Vec::with_capacity(k);
        for p in 1..=k {
            match domain.position_of(self.apply(p)) {
                Some(q) => images.push(q),
                None => return Err(PermError::Membership { size: k }),
            }
        }
        Ok(Self { images })
    }

    /// Whether `self` sends `{1..k}` into the domain's index set.
    pub fn sends_into(&self, domain: &OrderedSubset) -> bool {
        (1..=domain.size()).all(|p| domain.position_of(self.apply(p)).is_some())
    }

    /// Extends to degree `n` acting on the first `m` positions, identity on the rest.
    pub fn embed_front(&self, n: usize) -> Result<Self, PermError> {
        let m = self.degree();
        if n < m {
            return Err(PermError::EmbedDegree {
                origin: m,
                target: n,
            });
        }
        let mut images: Vec<usize> = self.images.clone();
        images.extend(m + 1..=n);
        Ok(Self { images })
    }

    /// Extends to degree `n` acting on the last `m` positions, identity on the rest.
    pub fn embed_back(&self, n: usize) -> Result<Self, PermError> {
        let m = self.degree();
        if n < m {
            return Err(PermError::EmbedDegree {
                origin: m,
                target: n,
            });
        }
        let offset = n - m;
        let mut images: Vec<usize> = (1..=offset).collect();
        images.extend(self.images.iter().map(|&q| q + offset));
        Ok(Self { images })
    }
}

/// All permutations of `{1..m}` in lexicographic one-line order.
///
/// The identity comes first; this is the canonical element order used by the
/// dense symmetric-group tables.
pub fn all_permutations(m: usize) -> Vec<Permutation> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(m);
    let mut used = vec![false; m];
    fn rec(m: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Permutation>) {
        if current.len() == m {
            out.push(Permutation {
                images: current.clone(),
            });
            return;
        }
        for q in 1..=m {
            if !used[q - 1] {
                used[q - 1] = true;
                current.push(q);
                rec(m, current, used, out);
                current.pop();
                used[q - 1] = false;
            }
        }
    }
    rec(m, &mut current, &mut used, &mut out);
    out
}

/// An ordered list of `k` distinct indices drawn from `{1..m}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedSubset {
    indices: Vec<usize>,
    ambient: usize,
}

impl OrderedSubset {
    pub fn new(indices: Vec<usize>, ambient: usize) -> Result<Self, PermError> {
        if indices.len() > ambient {
            return Err(PermError::SubsetTooLarge {
                size: indices.len(),
                ambient,
            });
        }
        let mut seen = vec![false; ambient];
        for &i in &indices {
            if i < 1 || i > ambient {
                return Err(PermError::IndexRange { index: i, ambient });
            }
            if seen[i - 1] {
                return Err(PermError::DuplicateIndex(i));
            }
            seen[i - 1] = true;
        }
        Ok(Self { indices, ambient })
    }

    /// The full domain `(1,…,m)`.
    pub fn full(m: usize) -> Self {
        Self {
            indices: (1..=m).collect(),
            ambient: m,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn ambient_degree(&self) -> usize {
        self.ambient
    }

    /// The 1-based position `q` with `i_q == index`, if present.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == index).map(|p| p + 1)
    }

    /// Ambient indices not in the subset, ascending.
    pub fn complement(&self) -> Vec<usize> {
        (1..=self.ambient)
            .filter(|i| !self.indices.contains(i))
            .collect()
    }

    /// The deterministic coset representative `t` with `t(p) = i_p` for
    /// `p ≤ k` and the complement filled in ascending order after it.
    pub fn canonical_representative(&self) -> Permutation {
        let mut images = self.indices.clone();
        images.extend(self.complement());
        Permutation { images }
    }
}

/// The factorization `a = t ∘ ú ∘ v̀` with `ú` acting on the first `k`
/// positions and `v̀` on the remaining `m−k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CosetDecomposition {
    pub representative: Permutation,
    pub inner: Permutation,
    pub outer: Permutation,
}

impl CosetDecomposition {
    /// `t ∘ embed_front(inner) ∘ embed_back(outer)`.
    pub fn reconstruct(&self) -> Result<Permutation, PermError> {
        let m = self.representative.degree();
        let front = self.inner.embed_front(m)?;
        let back = self.outer.embed_back(m)?;
        self.representative.compose(&front.compose(&back)?)
    }
}

/// Decomposes `a = t ∘ ú ∘ v̀` for a given representative `t`; `a` and `t`
/// must send `{1..k}` to the same unordered index set. For a fixed `t` the
/// pair `(u, v)` is unique.
pub fn coset_decompose(
    a: &Permutation,
    t: &Permutation,
    k: usize,
) -> Result<CosetDecomposition, PermError> {
    if a.degree() != t.degree() {
        return Err(PermError::DegreeMismatch(a.degree(), t.degree()));
    }
    let mut a_set: Vec<usize> = (1..=k).map(|p| a.apply(p)).collect();
    let mut t_set: Vec<usize> = (1..=k).map(|p| t.apply(p)).collect();
    a_set.sort_unstable();
    t_set.sort_unstable();
    if a_set != t_set {
        return Err(PermError::CosetMismatch { size: k });
    }
    // t⁻¹a fixes {1..k} and {k+1..m} setwise, so it splits cleanly.
    let c = t.inverse().compose(a)?;
    let inner = Permutation::from_images(c.images()[..k].to_vec())?;
    let outer = Permutation::from_images(c.images()[k..].iter().map(|&q| q - k).collect())?;
    debug_assert!((1..=k).all(|p| c.apply(p) <= k));
    Ok(CosetDecomposition {
        representative: t.clone(),
        inner,
        outer,
    })
}

/// How a global permutation `σ` acts on a reference domain.
///
/// Returns the reference domain of the corresponding neuron in the permuted
/// network — the σ-image index set with its canonical (ascending) ordering —
/// together with the induced `s ∈ S_k` solving `τ ∘ ś ∘ ẁ = σ ∘ t`, where
/// `t` and `τ` are the canonical representatives of the two domains.
pub fn induced_domain_action(
    sigma: &Permutation,
    domain: &OrderedSubset,
) -> Result<(OrderedSubset, Permutation), PermError> {
    if sigma.degree() != domain.ambient_degree() {
        return Err(PermError::DegreeMismatch(
            sigma.degree(),
            domain.ambient_degree(),
        ));
    }
    let k = domain.size();
    let mut image: Vec<usize> = domain.indices().iter().map(|&i| sigma.apply(i)).collect();
    image.sort_unstable();
    let permuted = OrderedSubset::new(image, domain.ambient_degree())?;
    let t = domain.canonical_representative();
    let tau = permuted.canonical_representative();
    let c = tau.inverse().compose(&sigma.compose(&t)?)?;
    let dec = coset_decompose(&c, &Permutation::identity(c.degree()), k)?;
    Ok((permuted, dec.inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perm(images: &[usize]) -> Permutation {
        Permutation::from_images(images.to_vec()).unwrap()
    }

    fn random_perm(rng: &mut ChaCha8Rng, m: usize) -> Permutation {
        let mut images: Vec<usize> = (1..=m).collect();
        images.shuffle(rng);
        Permutation::from_images(images).unwrap()
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::from_images(vec![1, 1, 3]).is_err());
        assert!(Permutation::from_images(vec![0, 1]).is_err());
        assert!(Permutation::from_images(vec![2, 3]).is_err());
        assert!(Permutation::from_images(vec![]).is_ok());
    }

    // The convention (a∘b)(p) = a(b(p)) — apply b first — pinned by a table.
    #[test]
    fn composition_applies_right_factor_first() {
        let a = perm(&[2, 3, 1]);
        let b = perm(&[1, 3, 2]);
        let ab = a.compose(&b).unwrap();
        for p in 1..=3 {
            assert_eq!(ab.apply(p), a.apply(b.apply(p)));
        }
        assert_eq!(ab, perm(&[2, 1, 3]));
    }

    #[test]
    fn compose_identity() {
        let s = perm(&[2, 3, 1]);
        assert_eq!(Permutation::identity(3).compose(&s).unwrap(), s);
        assert_eq!(s.compose(&Permutation::identity(3)).unwrap(), s);
    }

    #[test]
    fn compose_degree_mismatch() {
        let a = Permutation::identity(3);
        let b = Permutation::identity(4);
        assert!(matches!(
            a.compose(&b),
            Err(PermError::DegreeMismatch(3, 4))
        ));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Permutation::identity(4).inverse(), Permutation::identity(4));
        assert_eq!(perm(&[2, 3, 1]).inverse(), perm(&[3, 1, 2]));
    }

    #[test]
    fn inverse_cancels_over_random_s6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s = random_perm(&mut rng, 6);
            assert_eq!(s.compose(&s.inverse()).unwrap(), Permutation::identity(6));
            assert_eq!(s.inverse().compose(&s).unwrap(), Permutation::identity(6));
        }
    }

    #[test]
    fn group_axioms_random_s6() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_perm(&mut rng, 6);
            let b = random_perm(&mut rng, 6);
            let c = random_perm(&mut rng, 6);
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn restrict_examples() {
        let d = OrderedSubset::new(vec![1, 3], 4).unwrap();
        assert_eq!(perm(&[3, 1, 2, 4]).restrict(&d).unwrap(), perm(&[2, 1]));

        let full = OrderedSubset::new(vec![1, 2, 3], 5).unwrap();
        assert_eq!(
            Permutation::identity(5).restrict(&full).unwrap(),
            Permutation::identity(3)
        );

        let d2 = OrderedSubset::new(vec![1, 2], 3).unwrap();
        assert_eq!(perm(&[2, 1, 3]).restrict(&d2).unwrap(), perm(&[2, 1]));
    }

    #[test]
    fn restrict_membership_error() {
        // (2 3 1) sends 1 to 2 ∉ {1,3}.
        let d = OrderedSubset::new(vec![1, 3], 3).unwrap();
        assert!(matches!(
            perm(&[2, 3, 1]).restrict(&d),
            Err(PermError::Membership { size: 2 })
        ));
    }

    #[test]
    fn embed_front_examples() {
        assert_eq!(perm(&[2, 1]).embed_front(4).unwrap(), perm(&[2, 1, 3, 4]));
        assert_eq!(
            Permutation::identity(2).embed_front(5).unwrap(),
            Permutation::identity(5)
        );
        assert!(perm(&[2, 1, 3]).embed_front(2).is_err());
    }

    #[test]
    fn embed_back_examples() {
        assert_eq!(perm(&[2, 1]).embed_back(4).unwrap(), perm(&[1, 2, 4, 3]));
        assert_eq!(
            Permutation::identity(3).embed_back(5).unwrap(),
            Permutation::identity(5)
        );
    }

    #[test]
    fn embed_front_restrict_round_trip_s3() {
        let full = OrderedSubset::new(vec![1, 2, 3], 6).unwrap();
        for mu in all_permutations(3) {
            let lifted = mu.embed_front(6).unwrap();
            assert_eq!(lifted.restrict(&full).unwrap(), mu);
        }
    }

    #[test]
    fn front_and_back_embeddings_commute() {
        for u in all_permutations(2) {
            for v in all_permutations(2) {
                let uf = u.embed_front(4).unwrap();
                let vb = v.embed_back(4).unwrap();
                assert_eq!(uf.compose(&vb).unwrap(), vb.compose(&uf).unwrap());
            }
        }
    }

    #[test]
    fn canonical_representative_examples() {
        assert_eq!(
            OrderedSubset::full(4).canonical_representative(),
            Permutation::identity(4)
        );
        let d = OrderedSubset::new(vec![3, 1], 4).unwrap();
        assert_eq!(d.canonical_representative(), perm(&[3, 1, 2, 4]));
    }

    #[test]
    fn canonical_representative_sends_positions_to_indices() {
        for i in 1..=4usize {
            for j in 1..=4usize {
                if i == j {
                    continue;
                }
                let d = OrderedSubset::new(vec![i, j], 4).unwrap();
                let t = d.canonical_representative();
                assert_eq!(t.apply(1), i);
                assert_eq!(t.apply(2), j);
            }
        }
    }

    #[test]
    fn coset_decompose_of_representative_is_trivial() {
        let d = OrderedSubset::new(vec![3, 1], 4).unwrap();
        let t = d.canonical_representative();
        let dec = coset_decompose(&t, &t, 2).unwrap();
        assert_eq!(dec.inner, Permutation::identity(2));
        assert_eq!(dec.outer, Permutation::identity(2));
        assert_eq!(dec.reconstruct().unwrap(), t);
    }

    #[test]
    fn coset_decompose_spec_example() {
        let d = OrderedSubset::new(vec![3, 1], 4).unwrap();
        let t = d.canonical_representative();
        let a = perm(&[3, 1, 2, 4]);
        let dec = coset_decompose(&a, &t, 2).unwrap();
        assert_eq!(dec.inner, Permutation::identity(2));
        assert_eq!(dec.outer, Permutation::identity(2));
    }

    #[test]
    fn coset_mismatch_detected() {
        let t = OrderedSubset::new(vec![1, 3], 4)
            .unwrap()
            .canonical_representative();
        let a = perm(&[1, 2, 3, 4]); // sends {1,2} to {1,2} ≠ {1,3}
        assert!(matches!(
            coset_decompose(&a, &t, 2),
            Err(PermError::CosetMismatch { size: 2 })
        ));
    }

    // The map (u,v) ↦ t·ú·v̀ is a bijection onto S_m|_D, and decomposition
    // inverts it; exhaustive for m = 4, k ∈ {1,2,3}.
    #[test]
    fn coset_decomposition_unique_and_exhaustive() {
        for k in 1..=3usize {
            let d = OrderedSubset::new((1..=k).map(|i| 5 - i).collect(), 4).unwrap();
            let t = d.canonical_representative();
            let mut reachable = Vec::new();
            for u in all_permutations(k) {
                for v in all_permutations(4 - k) {
                    let a = t
                        .compose(&u.embed_front(4).unwrap())
                        .unwrap()
                        .compose(&v.embed_back(4).unwrap())
                        .unwrap();
                    let dec = coset_decompose(&a, &t, k).unwrap();
                    assert_eq!(dec.inner, u);
                    assert_eq!(dec.outer, v);
                    assert_eq!(dec.reconstruct().unwrap(), a);
                    reachable.push(a);
                }
            }
            reachable.sort();
            reachable.dedup();
            // Bijection onto S_4|_D: k!·(4−k)! distinct elements, all in the coset.
            let fact = |x: usize| (1..=x).product::<usize>();
            assert_eq!(reachable.len(), fact(k) * fact(4 - k));
            for a in &reachable {
                assert!(a.sends_into(&d));
            }
        }
    }

    // |S_m|_D| == k!·(m−k)! for every subset of every size, m ≤ 5.
    #[test]
    fn coset_cardinality_m_up_to_5() {
        let fact = |x: usize| (1..=x).product::<usize>();
        for m in 1..=5usize {
            let perms = all_permutations(m);
            for mask in 1u32..(1 << m) {
                let indices: Vec<usize> = (1..=m).filter(|i| mask & (1 << (i - 1)) != 0).collect();
                let k = indices.len();
                let d = OrderedSubset::new(indices, m).unwrap();
                let count = perms.iter().filter(|s| s.sends_into(&d)).count();
                assert_eq!(count, fact(k) * fact(m - k));
            }
        }
    }

    // restrict(σ ∘ embed_front(μ)) == restrict(σ) ∘ μ, exhaustive m=4, k=2.
    #[test]
    fn restriction_is_a_homomorphism_on_cosets() {
        for i in 1..=4usize {
            for j in 1..=4usize {
                if i == j {
                    continue;
                }
                let d = OrderedSubset::new(vec![i, j], 4).unwrap();
                for sigma in all_permutations(4).iter().filter(|s| s.sends_into(&d)) {
                    for mu in all_permutations(2) {
                        let lhs = sigma
                            .compose(&mu.embed_front(4).unwrap())
                            .unwrap()
                            .restrict(&d)
                            .unwrap();
                        let rhs = sigma.restrict(&d).unwrap().compose(&mu).unwrap();
                        assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }

    #[test]
    fn ordered_subset_validation() {
        assert!(OrderedSubset::new(vec![1, 1], 3).is_err());
        assert!(OrderedSubset::new(vec![0], 3).is_err());
        assert!(OrderedSubset::new(vec![4], 3).is_err());
        assert!(OrderedSubset::new(vec![1, 2, 3, 4], 3).is_err());
    }

    proptest! {
        #[test]
        fn inverse_is_an_involution(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_perm(&mut rng, 5);
            prop_assert_eq!(s.inverse().inverse(), s);
        }

        #[test]
        fn decomposition_reconstructs(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 5usize;
            let a = random_perm(&mut rng, m);
            let k = 2usize;
            let set: Vec<usize> = (1..=k).map(|p| a.apply(p)).collect();
            let t = OrderedSubset::new(set, m).unwrap().canonical_representative();
            let dec = coset_decompose(&a, &t, k).unwrap();
            prop_assert_eq!(dec.reconstruct().unwrap(), a);
        }
    }
}
