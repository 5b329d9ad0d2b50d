//! Discrete memory states and the switching lattice.
//!
//! A memory state records, per target, whether it has already been visited or
//! discarded. States form the lattice {0,1}^N ordered by bit inclusion; a
//! switch may only set additional bits, so every admissible successor is a
//! strict superset with at least one new bit. The backward processing order
//! groups states by the number of still-missing targets, starting from the
//! full state where everything is done.

use std::fmt;

/// Upper bound on the number of targets. The lattice has `2^N` states and
/// each state carries a full space-time value field, so this keeps instances
/// at desk scale.
pub const MAX_TARGETS: usize = 12;

/// Bit vector over targets: bit `j` set means target `j + 1` has been
/// visited or discarded.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryState {
    bits: u16,
    n: u8,
}

impl MemoryState {
    /// State with the given raw bit mask. Panics if `n` is out of range or
    /// `bits` has bits beyond `n`.
    pub fn new(bits: u16, n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_TARGETS, "target count out of range");
        assert!(bits < (1u16 << n), "mask has bits beyond target count");
        Self { bits, n: n as u8 }
    }

    /// All-zero state: nothing visited yet.
    pub fn empty(n: usize) -> Self {
        Self::new(0, n)
    }

    /// Final state with every bit set.
    pub fn full(n: usize) -> Self {
        Self::new(((1u32 << n) - 1) as u16, n)
    }

    /// Parses the bit-string notation, target 1 leftmost, e.g. `"1010"`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let n = s.len();
        if n < 1 || n > MAX_TARGETS {
            return Err(format!("memory state '{s}' must have 1..={MAX_TARGETS} bits"));
        }
        let mut bits = 0u16;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => bits |= 1 << i,
                '0' => {}
                _ => return Err(format!("memory state '{s}' has non-binary character '{c}'")),
            }
        }
        Ok(Self::new(bits, n))
    }

    pub fn raw_bits(&self) -> u16 {
        self.bits
    }

    pub fn target_count(&self) -> usize {
        self.n as usize
    }

    /// True if target `j` (1-based) is already visited/discarded.
    pub fn is_set(&self, j: usize) -> bool {
        assert!(j >= 1 && j <= self.target_count(), "target index out of range");
        self.bits & (1 << (j - 1)) != 0
    }

    /// Returns a copy with target `j` (1-based) marked visited.
    pub fn with_set(&self, j: usize) -> Self {
        assert!(j >= 1 && j <= self.target_count(), "target index out of range");
        Self { bits: self.bits | (1 << (j - 1)), n: self.n }
    }

    /// Number of visited/discarded targets.
    pub fn popcount(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// True iff every target has been visited or discarded.
    pub fn is_final(&self) -> bool {
        self.popcount() == self.target_count()
    }

    /// 1-based indices of targets still unvisited.
    pub fn missing_targets(&self) -> Vec<usize> {
        (1..=self.target_count()).filter(|&j| !self.is_set(j)).collect()
    }

    /// Admissible switch destinations: every superset of this state with at
    /// least one newly set bit. Empty exactly for the final state.
    pub fn successors(&self) -> Vec<MemoryState> {
        let zeros = Self::full(self.target_count()).bits & !self.bits;
        let mut out = Vec::new();
        // Iterate the nonempty subsets of the zero-bit mask.
        let mut sub = zeros;
        while sub != 0 {
            out.push(Self { bits: self.bits | sub, n: self.n });
            sub = (sub - 1) & zeros;
        }
        out.sort();
        out
    }

    /// True if `to` is an admissible switch destination from `self`.
    pub fn can_switch_to(&self, to: &MemoryState) -> bool {
        self.n == to.n && (self.bits & !to.bits) == 0 && to.bits != self.bits
    }
}

impl fmt::Display for MemoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 1..=self.target_count() {
            write!(f, "{}", if self.is_set(j) { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for MemoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MemoryState({self})")
    }
}

/// Indicator that bit `j` (1-based) differs between two states; this is the
/// per-target flip flag entering the distance-sum switch cost.
pub fn chi(j: usize, p: &MemoryState, q: &MemoryState) -> u8 {
    u8::from(p.is_set(j) != q.is_set(j))
}

/// Backward processing order over the lattice: level `k` holds every state
/// with `N - k` bits set, so level 0 is the final state alone and all switch
/// destinations of a state sit in strictly earlier levels.
#[derive(Debug, Clone)]
pub struct LatticeOrder {
    levels: Vec<Vec<MemoryState>>,
}

impl LatticeOrder {
    pub fn levels(&self) -> &[Vec<MemoryState>] {
        &self.levels
    }

    /// All states in processing order (final state first).
    pub fn states(&self) -> impl Iterator<Item = MemoryState> + '_ {
        self.levels.iter().flatten().copied()
    }
}

/// Groups all `2^N` states by descending popcount; within a level states are
/// ordered by ascending mask value so runs are reproducible.
pub fn backward_levels(n: usize) -> LatticeOrder {
    assert!(n >= 1 && n <= MAX_TARGETS, "target count out of range");
    let mut levels = vec![Vec::new(); n + 1];
    for bits in 0..(1u32 << n) as u16 {
        let p = MemoryState::new(bits, n);
        levels[n - p.popcount()].push(p);
    }
    for level in &mut levels {
        level.sort();
    }
    LatticeOrder { levels }
}
