use super::GroupError;
use std::collections::HashMap;
use std::sync::Arc;

/// Finite group as an explicit Cayley table. `mul(g, h)` composes with `h`
/// applied first, matching matrix products of representations.
#[derive(Debug)]
pub struct FiniteGroup {
    name: String,
    order: usize,
    cayley: Vec<usize>,
    identity: usize,
    inverses: Vec<usize>,
    generators: Vec<usize>,
    element_names: Vec<String>,
    /// Factor orders when built by [`direct_product`], for element decoding.
    factors: Option<(usize, usize)>,
}

impl FiniteGroup {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn mul(&self, g: usize, h: usize) -> usize {
        self.cayley[g * self.order + h]
    }

    pub fn inv(&self, g: usize) -> usize {
        self.inverses[g]
    }

    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    pub fn element_name(&self, g: usize) -> &str {
        &self.element_names[g]
    }

    pub fn elements(&self) -> std::ops::Range<usize> {
        0..self.order
    }

    /// Split a direct-product element into its factor indices.
    pub fn product_split(&self, g: usize) -> Option<(usize, usize)> {
        self.factors.map(|(_, o2)| (g / o2, g % o2))
    }

    /// Combine factor indices into a direct-product element.
    pub fn product_join(&self, g1: usize, g2: usize) -> Option<usize> {
        self.factors.map(|(_, o2)| g1 * o2 + g2)
    }

    fn build(
        name: String,
        cayley: Vec<usize>,
        generators: Vec<usize>,
        element_names: Vec<String>,
        factors: Option<(usize, usize)>,
    ) -> Result<Arc<Self>, GroupError> {
        let order = element_names.len();
        assert_eq!(cayley.len(), order * order);
        // Locate the identity.
        let mut identity = None;
        'outer: for e in 0..order {
            for g in 0..order {
                if cayley[e * order + g] != g || cayley[g * order + e] != g {
                    continue 'outer;
                }
            }
            identity = Some(e);
            break;
        }
        let identity = identity.ok_or_else(|| GroupError::InvalidTable(format!("{name}: no identity")))?;
        let mut inverses = vec![usize::MAX; order];
        for g in 0..order {
            let inv = (0..order).find(|&h| cayley[g * order + h] == identity && cayley[h * order + g] == identity);
            inverses[g] = inv.ok_or_else(|| GroupError::InvalidTable(format!("{name}: element {g} has no inverse")))?;
        }
        let group = FiniteGroup { name, order, cayley, identity, inverses, generators, element_names, factors };
        group.check_generator_closure()?;
        Ok(Arc::new(group))
    }

    fn check_generator_closure(&self) -> Result<(), GroupError> {
        let mut reached = vec![false; self.order];
        reached[self.identity] = true;
        let mut frontier = vec![self.identity];
        while let Some(g) = frontier.pop() {
            for &s in &self.generators {
                let n = self.mul(s, g);
                if !reached[n] {
                    reached[n] = true;
                    frontier.push(n);
                }
            }
        }
        if reached.iter().all(|&r| r) {
            Ok(())
        } else {
            Err(GroupError::InvalidTable(format!("{}: generators do not generate the group", self.name)))
        }
    }

    /// Exhaustive associativity check, O(order^3). Intended for tests; the
    /// largest group in the artifact has order 480.
    pub fn check_associativity(&self) -> Result<(), GroupError> {
        for a in 0..self.order {
            for b in 0..self.order {
                let ab = self.mul(a, b);
                for c in 0..self.order {
                    if self.mul(ab, c) != self.mul(a, self.mul(b, c)) {
                        return Err(GroupError::InvalidTable(format!(
                            "{}: associativity fails at ({a},{b},{c})",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cyclic group C_n; element k is the rotation r^k.
pub fn make_cyclic(n: usize) -> Result<Arc<FiniteGroup>, GroupError> {
    if n < 1 {
        return Err(GroupError::OutOfRange { what: "cyclic group size", value: n });
    }
    let mut cayley = vec![0usize; n * n];
    for a in 0..n {
        for b in 0..n {
            cayley[a * n + b] = (a + b) % n;
        }
    }
    let names = (0..n).map(|k| if k == 0 { "e".to_string() } else { format!("r{k}") }).collect();
    let generators = if n == 1 { vec![] } else { vec![1] };
    FiniteGroup::build(format!("C{n}"), cayley, generators, names, None)
}

/// Dihedral group D_n of order 2n; element j*n + k is r^k f^j with f r = r^-1 f.
pub fn make_dihedral(n: usize) -> Result<Arc<FiniteGroup>, GroupError> {
    if n < 1 {
        return Err(GroupError::OutOfRange { what: "dihedral group size", value: n });
    }
    let order = 2 * n;
    let idx = |k: usize, j: usize| j * n + k;
    let mut cayley = vec![0usize; order * order];
    for k1 in 0..n {
        for j1 in 0..2 {
            for k2 in 0..n {
                for j2 in 0..2 {
                    // (r^k1 f^j1)(r^k2 f^j2) = r^(k1 +/- k2) f^(j1 xor j2)
                    let k = if j1 == 0 { (k1 + k2) % n } else { (k1 + n - k2 % n) % n };
                    cayley[idx(k1, j1) * order + idx(k2, j2)] = idx(k, j1 ^ j2);
                }
            }
        }
    }
    let mut names = Vec::with_capacity(order);
    for j in 0..2 {
        for k in 0..n {
            names.push(match (k, j) {
                (0, 0) => "e".to_string(),
                (k, 0) => format!("r{k}"),
                (0, _) => "f".to_string(),
                (k, _) => format!("r{k}f"),
            });
        }
    }
    let generators = if n == 1 { vec![idx(0, 1)] } else { vec![idx(1, 0), idx(0, 1)] };
    FiniteGroup::build(format!("D{n}"), cayley, generators, names, None)
}

/// All permutations of 0..n in lexicographic order. This fixes the element
/// indexing of [`make_symmetric`].
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    rec(&mut Vec::new(), &mut items, &mut out);
    out
}

/// Symmetric group S_n (n <= 6 to bound the order at 720). Permutations act
/// on positions; composition applies the right factor first.
pub fn make_symmetric(n: usize) -> Result<Arc<FiniteGroup>, GroupError> {
    if !(1..=6).contains(&n) {
        return Err(GroupError::OutOfRange { what: "symmetric group size", value: n });
    }
    let perms = permutations(n);
    let order = perms.len();
    let index: HashMap<&[usize], usize> = perms.iter().enumerate().map(|(i, p)| (p.as_slice(), i)).collect();
    let mut cayley = vec![0usize; order * order];
    for (a, pa) in perms.iter().enumerate() {
        for (b, pb) in perms.iter().enumerate() {
            // (pa . pb)(i) = pa(pb(i))
            let comp: Vec<usize> = (0..n).map(|i| pa[pb[i]]).collect();
            cayley[a * order + b] = index[comp.as_slice()];
        }
    }
    let names = perms.iter().map(|p| format!("{p:?}")).collect();
    // Adjacent transpositions generate S_n.
    let mut generators = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let mut t: Vec<usize> = (0..n).collect();
        t.swap(i, i + 1);
        generators.push(index[t.as_slice()]);
    }
    FiniteGroup::build(format!("S{n}"), cayley, generators, names, None)
}

/// Direct product G1 x G2 with element (g1, g2) at index g1*|G2| + g2.
pub fn direct_product(g1: &Arc<FiniteGroup>, g2: &Arc<FiniteGroup>) -> Result<Arc<FiniteGroup>, GroupError> {
    let (o1, o2) = (g1.order(), g2.order());
    let order = o1 * o2;
    let mut cayley = vec![0usize; order * order];
    for a1 in 0..o1 {
        for a2 in 0..o2 {
            let a = a1 * o2 + a2;
            for b1 in 0..o1 {
                for b2 in 0..o2 {
                    let b = b1 * o2 + b2;
                    cayley[a * order + b] = g1.mul(a1, b1) * o2 + g2.mul(a2, b2);
                }
            }
        }
    }
    let mut names = Vec::with_capacity(order);
    for a1 in 0..o1 {
        for a2 in 0..o2 {
            names.push(format!("({},{})", g1.element_name(a1), g2.element_name(a2)));
        }
    }
    let mut generators: Vec<usize> = g1.generators().iter().map(|&s| s * o2 + g2.identity()).collect();
    generators.extend(g2.generators().iter().map(|&s| g1.identity() * o2 + s));
    FiniteGroup::build(
        format!("{}x{}", g1.name(), g2.name()),
        cayley,
        generators,
        names,
        Some((o1, o2)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_four_has_order_four_and_r4_is_identity() {
        let c4 = make_cyclic(4).unwrap();
        assert_eq!(c4.order(), 4);
        let mut g = c4.identity();
        for _ in 0..4 {
            g = c4.mul(1, g);
        }
        assert_eq!(g, c4.identity());
        c4.check_associativity().unwrap();
    }

    #[test]
    fn dihedral_four_is_nonabelian() {
        let d4 = make_dihedral(4).unwrap();
        assert_eq!(d4.order(), 8);
        let r = 1;
        let f = 4;
        assert_ne!(d4.mul(r, f), d4.mul(f, r));
        // f r = r^-1 f = r3 f
        assert_eq!(d4.mul(f, r), 4 + 3);
        d4.check_associativity().unwrap();
    }

    #[test]
    fn c4_times_s5_has_order_480() {
        let c4 = make_cyclic(4).unwrap();
        let s5 = make_symmetric(5).unwrap();
        let g = direct_product(&c4, &s5).unwrap();
        assert_eq!(g.order(), 480);
        assert_eq!(g.product_split(g.mul(5, 7)), {
            let (a1, a2) = (5 / 120, 5 % 120);
            let (b1, b2) = (7 / 120, 7 % 120);
            Some((
                (a1 + b1) % 4,
                {
                    let s5 = make_symmetric(5).unwrap();
                    s5.mul(a2, b2)
                },
            ))
        });
    }

    #[test]
    fn symmetric_inverses_and_associativity() {
        let s4 = make_symmetric(4).unwrap();
        assert_eq!(s4.order(), 24);
        s4.check_associativity().unwrap();
        for g in s4.elements() {
            assert_eq!(s4.mul(g, s4.inv(g)), s4.identity());
        }
    }

    #[test]
    fn out_of_range_sizes_are_rejected() {
        assert!(make_cyclic(0).is_err());
        assert!(make_symmetric(7).is_err());
        assert!(make_dihedral(0).is_err());
    }
}
