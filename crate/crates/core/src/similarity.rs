//! Gestalt pattern matching (Ratcliff/Obershelp) string similarity.
//!
//! The matcher finds a longest common substring, then recurses on the pieces
//! to its left and to its right. When several longest common substrings tie,
//! the one whose recursive decomposition matches the most characters is
//! taken; remaining ties go to the smallest position in `a`, then in `b`.
//! This keeps the matched count a function of the two strings alone, so it
//! does not change when the arguments are swapped.

use std::cell::RefCell;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingBlock {
    pub pos_a: usize,
    pub pos_b: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchingBlocks {
    /// Blocks in increasing position order in both strings.
    pub blocks: Vec<MatchingBlock>,
    pub total_matched: usize,
}

/// Matching blocks between two strings, with positions in characters.
pub fn matching_blocks(a: &str, b: &str) -> MatchingBlocks {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    matching_blocks_of(&a, &b)
}

/// `2 * M / (|a| + |b|)` over characters; `1.0` for two empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_of(&a, &b)
}

pub fn similarity_of<T: Eq>(a: &[T], b: &[T]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * match_count(a, b) as f64 / total as f64
}

/// Number of characters matched by the recursive decomposition.
pub fn match_count<T: Eq>(a: &[T], b: &[T]) -> usize {
    with_matcher(a, b, |m| m.count(Span::full(a.len(), b.len())))
}

pub fn matching_blocks_of<T: Eq>(a: &[T], b: &[T]) -> MatchingBlocks {
    with_matcher(a, b, |m| {
        let total_matched = m.count(Span::full(a.len(), b.len()));
        let mut blocks = Vec::new();
        m.collect(Span::full(a.len(), b.len()), &mut blocks);
        MatchingBlocks {
            blocks,
            total_matched,
        }
    })
}

const MEMO_MIN_SPAN: usize = 8;

#[derive(Default)]
struct Scratch {
    /// Bit-parallel scan: `masks[i]` has bit `j` set when `a[i] == b[j]`.
    masks: Vec<u64>,
    runs: Vec<u64>,
    next_runs: Vec<u64>,
    /// Scalar scan: two rows of the common-suffix table.
    rows: Vec<usize>,
    stack: Vec<MatchingBlock>,
    memo: FxHashMap<Span, (usize, MatchingBlock)>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

/// Runs `f` with a matcher whose buffers are reused across calls on the
/// same thread.
fn with_matcher<T: Eq, R>(a: &[T], b: &[T], f: impl FnOnce(&mut Matcher<'_, T>) -> R) -> R {
    with_matcher_using(a, b, b.len() <= 64, f)
}

fn with_matcher_using<T: Eq, R>(
    a: &[T],
    b: &[T],
    bits: bool,
    f: impl FnOnce(&mut Matcher<'_, T>) -> R,
) -> R {
    SCRATCH.with(|cell| {
        let scratch = &mut *cell.borrow_mut();
        if bits {
            scratch.masks.clear();
            scratch.masks.extend(
                a.iter()
                    .map(|x| b.iter().rev().fold(0u64, |m, y| m << 1 | u64::from(x == y))),
            );
            scratch.runs.resize(a.len(), 0);
            scratch.next_runs.resize(a.len(), 0);
        } else {
            scratch.rows.clear();
            scratch.rows.resize(2 * (b.len() + 1), 0);
        }
        scratch.stack.clear();
        scratch.memo.clear();
        f(&mut Matcher {
            a,
            b,
            bits,
            scratch,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Span {
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
}

impl Span {
    fn full(n: usize, m: usize) -> Self {
        Span {
            alo: 0,
            ahi: n,
            blo: 0,
            bhi: m,
        }
    }

    fn is_empty(&self) -> bool {
        self.alo == self.ahi || self.blo == self.bhi
    }

    fn max_match(&self) -> usize {
        (self.ahi - self.alo).min(self.bhi - self.blo)
    }

    fn split(&self, block: MatchingBlock) -> (Span, Span) {
        let left = Span {
            alo: self.alo,
            ahi: block.pos_a,
            blo: self.blo,
            bhi: block.pos_b,
        };
        let right = Span {
            alo: block.pos_a + block.len,
            ahi: self.ahi,
            blo: block.pos_b + block.len,
            bhi: self.bhi,
        };
        (left, right)
    }

    /// Bits `blo..bhi`.
    fn columns(&self) -> u64 {
        let width = self.bhi - self.blo;
        if width == 64 {
            u64::MAX
        } else {
            ((1u64 << width) - 1) << self.blo
        }
    }
}

/// Longest common substrings of one span.
struct Longest {
    len: usize,
    first: MatchingBlock,
    ties: usize,
}

struct Matcher<'a, T> {
    a: &'a [T],
    b: &'a [T],
    /// Whether `b` fits in one machine word, enabling the bit scan.
    bits: bool,
    scratch: &'a mut Scratch,
}

impl<'a, T: Eq> Matcher<'a, T> {
    /// Pushes the span's longest common substrings onto the stack above
    /// `base`, in increasing (pos_a, pos_b) order.
    fn scan(&mut self, s: Span, base: usize) -> Longest {
        if self.bits {
            self.scan_bits(s, base)
        } else {
            self.scan_rows(s, base)
        }
    }

    fn scan_bits(&mut self, s: Span, base: usize) -> Longest {
        let columns = s.columns();
        let Scratch {
            masks,
            runs,
            next_runs,
            stack,
            ..
        } = &mut *self.scratch;
        let n = s.ahi - s.alo;
        let (mut runs, mut next) = (&mut runs[..n], &mut next_runs[..n]);
        let mut any = 0;
        for (run, mask) in runs.iter_mut().zip(&masks[s.alo..s.ahi]) {
            *run = mask & columns;
            any |= *run;
        }
        if any == 0 {
            return Longest {
                len: 0,
                first: MatchingBlock {
                    pos_a: s.alo,
                    pos_b: s.blo,
                    len: 0,
                },
                ties: 0,
            };
        }
        // After `len` rounds, bit `j` of `runs[k]` for `k >= len - 1` marks a
        // common substring of length `len` ending at `a[alo + k]` and `b[j]`.
        let mut len = 1;
        while len < n {
            let mut any = 0;
            for k in len..n {
                let run = runs[k] & runs[k - 1] << 1;
                next[k] = run;
                any |= run;
            }
            if any == 0 {
                break;
            }
            std::mem::swap(&mut runs, &mut next);
            len += 1;
        }
        let mut ties = 0;
        for k in len - 1..n {
            let mut bits = runs[k];
            while bits != 0 {
                let j = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                stack.push(MatchingBlock {
                    pos_a: s.alo + k + 1 - len,
                    pos_b: j + 1 - len,
                    len,
                });
                ties += 1;
            }
        }
        Longest {
            len,
            first: stack[base],
            ties,
        }
    }

    fn scan_rows(&mut self, s: Span, base: usize) -> Longest {
        let mut best = Longest {
            len: 0,
            first: MatchingBlock {
                pos_a: s.alo,
                pos_b: s.blo,
                len: 0,
            },
            ties: 0,
        };
        let width = self.b.len() + 1;
        let (mut prev, mut row) = self.scratch.rows.split_at_mut(width);
        prev[s.blo..=s.bhi].fill(0);
        row[s.blo] = 0;
        for i in s.alo..s.ahi {
            let ai = &self.a[i];
            for j in s.blo..s.bhi {
                let l = if *ai == self.b[j] { prev[j] + 1 } else { 0 };
                row[j + 1] = l;
                if l == 0 || l < best.len {
                    continue;
                }
                let block = MatchingBlock {
                    pos_a: i + 1 - l,
                    pos_b: j + 1 - l,
                    len: l,
                };
                if l > best.len {
                    best = Longest {
                        len: l,
                        first: block,
                        ties: 1,
                    };
                    self.scratch.stack.truncate(base);
                } else {
                    best.ties += 1;
                }
                self.scratch.stack.push(block);
            }
            std::mem::swap(&mut prev, &mut row);
        }
        best
    }

    /// Upper bound on the matched count of a span. The matching blocks
    /// form a common subsequence, so its longest length bounds them.
    fn bound(&self, s: Span) -> usize {
        if s.is_empty() {
            return 0;
        }
        if !self.bits {
            return s.max_match();
        }
        let width = s.bhi - s.blo;
        let low = if width == 64 {
            u64::MAX
        } else {
            (1u64 << width) - 1
        };
        let mut v = low;
        for m in &self.scratch.masks[s.alo..s.ahi] {
            let u = v & (m >> s.blo);
            v = (v.wrapping_add(u) | (v - u)) & low;
        }
        width - v.count_ones() as usize
    }

    fn count(&mut self, s: Span) -> usize {
        self.solve(s).0
    }

    /// Best matched count for the span and the block chosen at its top.
    fn solve(&mut self, s: Span) -> (usize, Option<MatchingBlock>) {
        if s.is_empty() {
            return (0, None);
        }
        // A single character matches at its first occurrence, if any.
        if s.ahi - s.alo == 1 {
            let c = &self.a[s.alo];
            return match self.b[s.blo..s.bhi].iter().position(|x| x == c) {
                Some(j) => (1, Some(MatchingBlock { pos_a: s.alo, pos_b: s.blo + j, len: 1 })),
                None => (0, None),
            };
        }
        if s.bhi - s.blo == 1 {
            let c = &self.b[s.blo];
            return match self.a[s.alo..s.ahi].iter().position(|x| x == c) {
                Some(i) => (1, Some(MatchingBlock { pos_a: s.alo + i, pos_b: s.blo, len: 1 })),
                None => (0, None),
            };
        }
        if s.max_match() > MEMO_MIN_SPAN {
            if let Some(&(n, block)) = self.scratch.memo.get(&s) {
                return (n, Some(block));
            }
        }
        let base = self.scratch.stack.len();
        let longest = self.scan(s, base);
        if longest.len == 0 {
            return (0, None);
        }
        if longest.ties == 1 {
            self.scratch.stack.truncate(base);
            let (left, right) = s.split(longest.first);
            let n = longest.len + self.count(left) + self.count(right);
            return (n, Some(longest.first));
        }
        let end = self.scratch.stack.len();
        let target = self.bound(s);
        let mut best: Option<(usize, MatchingBlock)> = None;
        for k in base..end {
            let block = self.scratch.stack[k];
            let (left, right) = s.split(block);
            if let Some((bn, _)) = best {
                if block.len + self.bound(left) + self.bound(right) <= bn {
                    continue;
                }
            }
            let n = block.len + self.count(left) + self.count(right);
            if best.map_or(true, |(bn, _)| n > bn) {
                best = Some((n, block));
                if n == target {
                    break;
                }
            }
        }
        self.scratch.stack.truncate(base);
        let best = best.expect("tied candidates are non-empty");
        // Small spans are cheaper to solve again than to remember.
        if s.max_match() > MEMO_MIN_SPAN {
            self.scratch.memo.insert(s, best);
        }
        (best.0, Some(best.1))
    }

    fn collect(&mut self, s: Span, out: &mut Vec<MatchingBlock>) {
        if let (_, Some(block)) = self.solve(s) {
            let (left, right) = s.split(block);
            self.collect(left, out);
            out.push(block);
            self.collect(right, out);
        }
    }
}
