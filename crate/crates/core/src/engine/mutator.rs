//! Input mutation: deterministic walking stages, stacked havoc and splice.

use rand::Rng;

pub const ARITH_MAX: u32 = 16;
pub const HAVOC_MAX_STACK_POW: u32 = 4;
const HAVOC_BLOCK_MAX: usize = 32;

pub const INTERESTING: [i32; 16] = [
    0, -1, 1, 16, 32, 64, 100, 127, 128, 255, 256, 512, 1024, 4096, 32767, 65535,
];

/// Interesting values that fit in `bytes` bytes, as little-endian patterns,
/// with duplicates removed.
pub fn interesting_values(bytes: usize) -> Vec<u32> {
    let bits = bytes * 8;
    let mut out: Vec<u32> = Vec::new();
    for v in INTERESTING {
        let fits = if bits == 32 {
            true
        } else {
            let min = -(1i64 << (bits - 1));
            let max = (1i64 << bits) - 1;
            (min..=max).contains(&(v as i64))
        };
        if !fits {
            continue;
        }
        let mask = if bits == 32 {
            u32::MAX
        } else {
            (1u32 << bits) - 1
        };
        let pattern = (v as u32) & mask;
        if !out.contains(&pattern) {
            out.push(pattern);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Flips `width` consecutive bits starting at bit `bit`.
    BitFlip {
        width: u8,
        bit: usize,
    },
    /// Inverts `width` bytes at `pos`.
    ByteFlip {
        width: u8,
        pos: usize,
    },
    /// Adds `delta` to the little-endian integer of `width` bytes at `pos`.
    Arith {
        width: u8,
        pos: usize,
        delta: i32,
    },
    /// Overwrites `width` bytes at `pos` with the little-endian `value`.
    Interesting {
        width: u8,
        pos: usize,
        value: u32,
    },
    Havoc,
    Splice,
}

impl Stage {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Stage::Havoc | Stage::Splice)
    }
}

/// Walking stages over the first `len` bytes, in execution order.
pub fn deterministic_stages(len: usize) -> impl Iterator<Item = Stage> {
    let bits = len * 8;
    let flips = [1u8, 2, 4].into_iter().flat_map(move |w| {
        (0..(bits + 1).saturating_sub(w as usize)).map(move |bit| Stage::BitFlip { width: w, bit })
    });
    let byte_flips = [1u8, 2, 4].into_iter().flat_map(move |w| {
        (0..(len + 1).saturating_sub(w as usize)).map(move |pos| Stage::ByteFlip { width: w, pos })
    });
    let arith = [1u8, 2, 4].into_iter().flat_map(move |w| {
        (0..(len + 1).saturating_sub(w as usize)).flat_map(move |pos| {
            (1..=ARITH_MAX as i32)
                .flat_map(|d| [d, -d])
                .map(move |delta| Stage::Arith {
                    width: w,
                    pos,
                    delta,
                })
        })
    });
    let interesting = [1u8, 2, 4].into_iter().flat_map(move |w| {
        let values = interesting_values(w as usize);
        (0..(len + 1).saturating_sub(w as usize)).flat_map(move |pos| {
            values
                .clone()
                .into_iter()
                .map(move |value| Stage::Interesting {
                    width: w,
                    pos,
                    value,
                })
        })
    });
    flips.chain(byte_flips).chain(arith).chain(interesting)
}

/// Number of variants `deterministic_stages(len)` yields.
pub fn deterministic_stage_count(len: usize) -> usize {
    let bits = len * 8;
    let fit = |n: usize, w: usize| (n + 1).saturating_sub(w);
    let flips: usize = [1, 2, 4].iter().map(|&w| fit(bits, w)).sum();
    let bytes: usize = [1, 2, 4].iter().map(|&w| fit(len, w)).sum();
    let arith = bytes * 2 * ARITH_MAX as usize;
    let interesting: usize = [1, 2, 4]
        .iter()
        .map(|&w| fit(len, w) * interesting_values(w).len())
        .sum();
    flips + bytes + arith + interesting
}

fn read_le(buf: &[u8], pos: usize, width: usize) -> u32 {
    let mut v = 0u32;
    for i in (0..width).rev() {
        v = (v << 8) | buf[pos + i] as u32;
    }
    v
}

fn write_le(buf: &mut [u8], pos: usize, width: usize, value: u32) {
    for i in 0..width {
        buf[pos + i] = (value >> (8 * i)) as u8;
    }
}

fn write_be(buf: &mut [u8], pos: usize, width: usize, value: u32) {
    for i in 0..width {
        buf[pos + width - 1 - i] = (value >> (8 * i)) as u8;
    }
}

fn width_mask(width: usize) -> u32 {
    if width == 4 {
        u32::MAX
    } else {
        (1u32 << (8 * width)) - 1
    }
}

/// Applies a deterministic stage in place.
pub fn apply_deterministic(buf: &mut [u8], stage: Stage) {
    match stage {
        Stage::BitFlip { width, bit } => {
            for b in bit..bit + width as usize {
                buf[b / 8] ^= 0x80 >> (b % 8);
            }
        }
        Stage::ByteFlip { width, pos } => {
            for b in &mut buf[pos..pos + width as usize] {
                *b ^= 0xFF;
            }
        }
        Stage::Arith { width, pos, delta } => {
            let w = width as usize;
            let v = read_le(buf, pos, w).wrapping_add(delta as u32) & width_mask(w);
            write_le(buf, pos, w, v);
        }
        Stage::Interesting { width, pos, value } => write_le(buf, pos, width as usize, value),
        Stage::Havoc | Stage::Splice => {}
    }
}

/// Prefix of `a` up to a random split point followed by the rest of `b`.
/// The split is chosen where the inputs differ when possible.
pub fn splice<R: Rng + ?Sized>(a: &[u8], b: &[u8], rng: &mut R) -> Vec<u8> {
    let common = a.len().min(b.len());
    if common < 2 {
        return a.to_vec();
    }
    let first_diff = a.iter().zip(b).position(|(x, y)| x != y);
    let last_diff = (0..common).rev().find(|&i| a[i] != b[i]);
    let split = match (first_diff, last_diff) {
        (Some(f), Some(l)) if l > f => rng.random_range(f + 1..=l),
        _ => rng.random_range(1..common),
    };
    let mut out = a[..split].to_vec();
    out.extend_from_slice(&b[split..]);
    out
}

/// Applies a stack of `1..=2^HAVOC_MAX_STACK_POW` random operations.
pub fn havoc<R: Rng + ?Sized>(input: &[u8], max_len: usize, rng: &mut R) -> Vec<u8> {
    let mut buf = input.to_vec();
    let stack = 1usize << rng.random_range(0..=HAVOC_MAX_STACK_POW);
    for _ in 0..stack {
        havoc_op(&mut buf, max_len, rng);
    }
    if buf.is_empty() {
        buf.push(rng.random());
    }
    buf.truncate(max_len.max(1));
    buf
}

fn random_block_len<R: Rng + ?Sized>(limit: usize, rng: &mut R) -> usize {
    rng.random_range(1..=limit.clamp(1, HAVOC_BLOCK_MAX))
}

fn havoc_op<R: Rng + ?Sized>(buf: &mut Vec<u8>, max_len: usize, rng: &mut R) {
    let len = buf.len();
    if len == 0 {
        let n = rng.random_range(1..=8);
        buf.extend((0..n).map(|_| rng.random::<u8>()));
        return;
    }
    match rng.random_range(0..16u8) {
        0 => {
            let bit = rng.random_range(0..len * 8);
            buf[bit / 8] ^= 0x80 >> (bit % 8);
        }
        1 => {
            let vals = interesting_values(1);
            let pos = rng.random_range(0..len);
            buf[pos] = vals[rng.random_range(0..vals.len())] as u8;
        }
        2 | 3 => {
            let w = if rng.random() { 2 } else { 4 };
            if len >= w {
                let vals = interesting_values(w);
                let v = vals[rng.random_range(0..vals.len())];
                let pos = rng.random_range(0..=len - w);
                if rng.random_range(0..4) == 0 {
                    write_be(buf, pos, w, v);
                } else {
                    write_le(buf, pos, w, v);
                }
            }
        }
        4 | 5 => {
            let pos = rng.random_range(0..len);
            let d = rng.random_range(1..=ARITH_MAX as u8 * 2);
            buf[pos] = if rng.random() {
                buf[pos].wrapping_add(d)
            } else {
                buf[pos].wrapping_sub(d)
            };
        }
        6 => {
            let w = if rng.random() { 2 } else { 4 };
            if len >= w {
                let pos = rng.random_range(0..=len - w);
                let d = rng.random_range(1..=ARITH_MAX * 2);
                let v = read_le(buf, pos, w);
                let v = if rng.random() {
                    v.wrapping_add(d)
                } else {
                    v.wrapping_sub(d)
                };
                write_le(buf, pos, w, v & width_mask(w));
            }
        }
        7 => {
            let pos = rng.random_range(0..len);
            buf[pos] ^= rng.random_range(1..=255u8);
        }
        8 | 9 => {
            if len > 1 {
                let n = random_block_len(len - 1, rng);
                let pos = rng.random_range(0..=len - n);
                buf.drain(pos..pos + n);
            }
        }
        10 => {
            if len < max_len {
                let n = random_block_len(len.min(max_len - len), rng);
                let from = rng.random_range(0..=len - n);
                let to = rng.random_range(0..=len);
                let block: Vec<u8> = buf[from..from + n].to_vec();
                buf.splice(to..to, block);
            }
        }
        11 => {
            if len < max_len {
                let n = random_block_len(max_len - len, rng);
                let to = rng.random_range(0..=len);
                let fill = if rng.random() {
                    rng.random()
                } else {
                    buf[rng.random_range(0..len)]
                };
                buf.splice(to..to, std::iter::repeat_n(fill, n));
            }
        }
        12 => {
            if len > 1 {
                let n = random_block_len(len - 1, rng);
                let from = rng.random_range(0..=len - n);
                let to = rng.random_range(0..=len - n);
                buf.copy_within(from..from + n, to);
            }
        }
        13 => {
            let n = random_block_len(len, rng);
            let to = rng.random_range(0..=len - n);
            let fill = rng.random::<u8>();
            buf[to..to + n].fill(fill);
        }
        14 => {
            let keep = rng.random_range(1..=len);
            buf.truncate(keep);
        }
        _ => {
            if len < max_len {
                let n = random_block_len(max_len - len, rng);
                buf.extend((0..n).map(|_| rng.random::<u8>()));
            }
        }
    }
}

/// Havoc on the first `focus` bytes, keeping the rest of the input as is.
/// Bytes past what an execution consumed cannot change it, so callers pass
/// the consumed length plus some slack.
pub fn havoc_focused<R: Rng + ?Sized>(
    input: &[u8],
    focus: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<u8> {
    let focus = focus.clamp(1, input.len().max(1));
    if focus >= input.len() {
        return havoc(input, max_len, rng);
    }
    let tail = &input[focus..];
    let head_max = max_len.saturating_sub(tail.len()).max(1);
    let mut out = havoc(&input[..focus], head_max, rng);
    out.extend_from_slice(tail);
    out.truncate(max_len.max(1));
    out
}

/// Produces one variant of `input` for the given stage. `partner` is the
/// other parent for `Splice`; without one, splice degrades to havoc. Havoc
/// edits are confined to the first `focus` bytes.
pub fn mutate<R: Rng + ?Sized>(
    input: &[u8],
    stage: Stage,
    partner: Option<&[u8]>,
    focus: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<u8> {
    match stage {
        Stage::Havoc => havoc_focused(input, focus, max_len, rng),
        Stage::Splice => match partner {
            Some(b) => {
                let spliced = splice(input, b, rng);
                havoc_focused(&spliced, focus, max_len, rng)
            }
            None => havoc_focused(input, focus, max_len, rng),
        },
        det => {
            let mut buf = input.to_vec();
            apply_deterministic(&mut buf, det);
            buf
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interesting_sets_are_filtered_and_unique() {
        let v8 = interesting_values(1);
        assert!(v8.contains(&0xFF) && v8.contains(&0x80) && v8.contains(&0x64));
        assert!(!v8.contains(&0x100));
        assert_eq!(v8.len(), 9);
        let v16 = interesting_values(2);
        assert!(v16.contains(&0xFFFF) && v16.contains(&0x7FFF));
        assert_eq!(v16.len(), 15);
        assert_eq!(interesting_values(4).len(), 16);
    }

    #[test]
    fn stage_count_matches_iterator() {
        for len in [0, 1, 2, 3, 4, 5, 9] {
            assert_eq!(
                deterministic_stages(len).count(),
                deterministic_stage_count(len)
            );
        }
    }

    #[test]
    fn bit_flip_walks_msb_first() {
        let mut b = [0u8; 2];
        apply_deterministic(&mut b, Stage::BitFlip { width: 2, bit: 7 });
        assert_eq!(b, [0x01, 0x80]);
    }

    #[test]
    fn arith_is_little_endian_and_wraps() {
        let mut b = [0xFF, 0x00, 0x00, 0x00];
        apply_deterministic(
            &mut b,
            Stage::Arith {
                width: 2,
                pos: 0,
                delta: 1,
            },
        );
        assert_eq!(b, [0x00, 0x01, 0x00, 0x00]);
        apply_deterministic(
            &mut b,
            Stage::Arith {
                width: 4,
                pos: 0,
                delta: -0x101,
            },
        );
        assert_eq!(b, [0xFF; 4]);
    }

    #[test]
    fn splice_keeps_prefix_and_suffix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [1u8; 16];
        let b = [2u8; 16];
        for _ in 0..50 {
            let s = splice(&a, &b, &mut rng);
            assert_eq!(s.len(), 16);
            let split = s.iter().position(|&x| x == 2).unwrap();
            assert!(split >= 1 && s[..split].iter().all(|&x| x == 1));
            assert!(s[split..].iter().all(|&x| x == 2));
        }
    }

    #[test]
    fn focused_havoc_keeps_the_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input: Vec<u8> = (0..200).map(|i| i as u8).collect();
        for _ in 0..200 {
            let out = havoc_focused(&input, 20, 4096, &mut rng);
            assert!(out.ends_with(&input[20..]));
        }
    }

    #[test]
    fn havoc_respects_max_len() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = vec![0u8; 60];
        for _ in 0..500 {
            let out = havoc(&input, 64, &mut rng);
            assert!(!out.is_empty() && out.len() <= 64);
        }
    }
}
