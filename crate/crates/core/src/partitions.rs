//! Factor structures as set partitions of the variable indices.
//!
//! Variables are 0-based internally and 1-based in every text form, so the
//! partition with groups `{0,2}` and `{1}` renders as `[1 3][2]`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension [`enumerate_partitions`] will expand (B₁₀ = 115 975).
pub const MAX_ENUMERATION_DIM: usize = 10;

/// Largest `n` accepted by [`bell_number`].
pub const MAX_BELL_N: usize = 25;

/// Multiset of group sizes, stored non-increasing, e.g. `(3,2,1,1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TypeSignature(Vec<usize>);

impl TypeSignature {
    pub fn new(mut sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidPartition(format!(
                "type signature needs positive sizes, got {sizes:?}"
            )));
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Self(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.iter().sum()
    }

    /// Number of singleton groups (the `1` entries).
    pub fn n_singletons(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    /// Every type signature of dimension `n`, lexicographically decreasing:
    /// `(5), (4,1), (3,2), (3,1,1), ...`.
    pub fn all(n: usize) -> Vec<TypeSignature> {
        fn rec(remaining: usize, max_part: usize, prefix: &mut Vec<usize>, out: &mut Vec<TypeSignature>) {
            if remaining == 0 {
                out.push(TypeSignature(prefix.clone()));
                return;
            }
            for part in (1..=remaining.min(max_part)).rev() {
                prefix.push(part);
                rec(remaining - part, part, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        if n > 0 {
            rec(n, n, &mut Vec::new(), &mut out);
        }
        out
    }
}

impl TryFrom<Vec<usize>> for TypeSignature {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TypeSignature> for Vec<usize> {
    fn from(t: TypeSignature) -> Self {
        t.0
    }
}

impl fmt::Display for TypeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl FromStr for TypeSignature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let sizes = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidPartition(format!("bad type signature {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }
}

impl Ord for TypeSignature {
    /// Lexicographic on the size list.
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl PartialOrd for TypeSignature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A factor structure: disjoint groups covering `0..n_vars`.
///
/// Always held in canonical form: each group sorted ascending, groups sorted
/// by size descending with ties broken by smallest member. Two partitions
/// describe the same model iff they are `==`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct ModelPartition {
    n_vars: usize,
    groups: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    n_vars: usize,
    groups: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for ModelPartition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        ModelPartition::new(r.n_vars, r.groups)
    }
}

impl From<ModelPartition> for PartitionRepr {
    fn from(p: ModelPartition) -> Self {
        PartitionRepr {
            n_vars: p.n_vars,
            groups: p.groups,
        }
    }
}

impl ModelPartition {
    /// Builds a partition from 0-based groups, validating coverage and
    /// disjointness, then canonicalizes.
    pub fn new(n_vars: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::InvalidPartition("partition of zero variables".into()));
        }
        let mut seen = vec![false; n_vars];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidPartition("empty group".into()));
            }
            for &v in g {
                if v >= n_vars {
                    return Err(Error::InvalidPartition(format!(
                        "variable {} out of range 1..={n_vars}",
                        v + 1
                    )));
                }
                if seen[v] {
                    return Err(Error::InvalidPartition(format!(
                        "variable {} appears twice",
                        v + 1
                    )));
                }
                seen[v] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "variable {} not assigned to any group",
                missing + 1
            )));
        }
        Ok(Self::canonical(n_vars, groups))
    }

    fn canonical(n_vars: usize, mut groups: Vec<Vec<usize>>) -> Self {
        for g in groups.iter_mut() {
            g.sort_unstable();
        }
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        Self { n_vars, groups }
    }

    /// All variables in their own group.
    pub fn independence(n_vars: usize) -> Self {
        Self::canonical(n_vars, (0..n_vars).map(|v| vec![v]).collect())
    }

    /// Contiguous placement of a type: `(3,2)` gives `[1 2 3][4 5]`.
    pub fn from_type_signature(sig: &TypeSignature) -> Self {
        let mut next = 0;
        let groups = sig
            .sizes()
            .iter()
            .map(|&s| {
                let g: Vec<usize> = (next..next + s).collect();
                next += s;
                g
            })
            .collect();
        Self::canonical(sig.n_vars(), groups)
    }

    /// Parses the bracket form with `n_vars` taken from the largest index.
    pub fn parse(s: &str) -> Result<Self> {
        let groups = parse_groups(s)?;
        let n = groups.iter().flatten().copied().max().map_or(0, |m| m + 1);
        Self::new(n, groups)
    }

    /// Parses the bracket form in dimension `n_vars`; variables not mentioned
    /// become singletons.
    pub fn parse_with_dim(s: &str, n_vars: usize) -> Result<Self> {
        let mut groups = parse_groups(s)?;
        let mut seen = vec![false; n_vars];
        for &v in groups.iter().flatten() {
            if v < n_vars {
                seen[v] = true;
            }
        }
        groups.extend(seen.iter().enumerate().filter(|(_, s)| !**s).map(|(v, _)| vec![v]));
        Self::new(n_vars, groups)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Index of the group containing `var`.
    pub fn group_of(&self, var: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&var))
    }

    pub fn type_signature(&self) -> TypeSignature {
        TypeSignature(self.groups.iter().map(Vec::len).collect())
    }

    /// Number of factor groups (size ≥ 2).
    pub fn n_factors(&self) -> usize {
        self.groups.iter().filter(|g| g.len() >= 2).count()
    }

    /// One rate per variable plus one per factor group.
    pub fn param_count(&self) -> usize {
        self.n_vars + self.n_factors()
    }

    /// Union of groups `i` and `j`.
    pub fn merge_groups(&self, i: usize, j: usize) -> Result<Self> {
        let n_groups = self.groups.len();
        for index in [i, j] {
            if index >= n_groups {
                return Err(Error::GroupIndex { index, n_groups });
            }
        }
        if i == j {
            return Err(Error::InvalidPartition(format!(
                "cannot merge group {i} with itself"
            )));
        }
        let mut groups = Vec::with_capacity(n_groups - 1);
        let mut merged = self.groups[i].clone();
        merged.extend_from_slice(&self.groups[j]);
        groups.push(merged);
        groups.extend(
            self.groups
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i && *k != j)
                .map(|(_, g)| g.clone()),
        );
        Ok(Self::canonical(self.n_vars, groups))
    }

    /// Every partition reachable by merging two groups, in canonical order.
    pub fn successor_models(&self) -> Vec<Self> {
        let g = self.groups.len();
        let mut out = Vec::with_capacity(g * g.saturating_sub(1) / 2);
        for i in 0..g {
            for j in (i + 1)..g {
                out.push(self.merge_groups(i, j).expect("indices in range"));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Relabels variable `v` as `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_vars {
            return Err(Error::InvalidPartition(format!(
                "permutation of length {} for {} variables",
                perm.len(),
                self.n_vars
            )));
        }
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&v| perm[v]).collect())
            .collect();
        Self::new(self.n_vars, groups)
    }
}

fn parse_groups(s: &str) -> Result<Vec<Vec<usize>>> {
    let bad = |msg: &str| Error::InvalidPartition(format!("{msg} in {s:?}"));
    let mut groups = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let body_start = rest.strip_prefix('[').ok_or_else(|| bad("expected '['"))?;
        let close = body_start.find(']').ok_or_else(|| bad("unclosed '['"))?;
        let body = &body_start[..close];
        let group = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(bad(&format!("bad variable index {t:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        groups.push(group);
        rest = body_start[close + 1..].trim_start();
    }
    if groups.is_empty() {
        return Err(bad("no groups"));
    }
    Ok(groups)
}

impl fmt::Display for ModelPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            let members: Vec<String> = g.iter().map(|v| (v + 1).to_string()).collect();
            write!(f, "[{}]", members.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for ModelPartition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Ord for ModelPartition {
    /// Canonical model order: coarser type signature first (as in the
    /// selection tables), then groups lexicographically.
    fn cmp(&self, other: &Self) -> Ordering {
        self.n_vars
            .cmp(&other.n_vars)
            .then_with(|| other.type_signature().cmp(&self.type_signature()))
            .then_with(|| self.groups.cmp(&other.groups))
    }
}

impl PartialOrd for ModelPartition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All set partitions of `0..n_vars`, canonical and sorted.
pub fn enumerate_partitions(n_vars: usize) -> Result<Vec<ModelPartition>> {
    if n_vars == 0 {
        return Err(Error::InvalidPartition("partition of zero variables".into()));
    }
    if n_vars > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge {
            n: n_vars,
            max: MAX_ENUMERATION_DIM,
        });
    }
    // Restricted growth strings: label[0] = 0, label[i] <= 1 + max(label[..i]).
    let mut out = Vec::new();
    let mut labels = vec![0usize; n_vars];
    let mut maxes = vec![0usize; n_vars];
    loop {
        let n_blocks = maxes[n_vars - 1] + 1;
        let mut groups = vec![Vec::new(); n_blocks];
        for (v, &l) in labels.iter().enumerate() {
            groups[l].push(v);
        }
        out.push(ModelPartition::canonical(n_vars, groups));

        let mut i = n_vars - 1;
        loop {
            if i == 0 {
                out.sort();
                return Ok(out);
            }
            if labels[i] <= maxes[i - 1] {
                labels[i] += 1;
                maxes[i] = maxes[i - 1].max(labels[i]);
                for k in (i + 1)..n_vars {
                    labels[k] = 0;
                    maxes[k] = maxes[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Bell number Bₙ via the Bell triangle.
pub fn bell_number(n: usize) -> Result<u128> {
    if n > MAX_BELL_N {
        return Err(Error::DimensionTooLarge { n, max: MAX_BELL_N });
    }
    if n == 0 {
        return Ok(1);
    }
    let mut row = vec![1u128];
    for _ in 1..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("non-empty row"));
        for &x in &row {
            let prev = *next.last().expect("non-empty row");
            next.push(prev + x);
        }
        row = next;
    }
    Ok(*row.last().expect("non-empty row"))
}

/// Worst-case number of fits in a forward search: 1 + C(N+1, 3).
pub fn max_forward_tests(n_vars: usize) -> u64 {
    let n = n_vars as u64;
    1 + (n + 1) * n * n.saturating_sub(1) / 6
}
