//! Input mutations: walking bit flips and stacked havoc.

use rand::Rng;

const INTERESTING: [u8; 9] = [0x00, 0x01, 0x0a, 0x0d, 0x20, 0x40, 0x7f, 0x80, 0xff];

/// Walking single-bit flips, one input per bit of the first `max_bytes`
/// bytes.
pub fn bitflips(input: &[u8], max_bytes: usize) -> impl Iterator<Item = Vec<u8>> + '_ {
    let n = input.len().min(max_bytes) * 8;
    (0..n).map(move |bit| {
        let mut v = input.to_vec();
        v[bit / 8] ^= 0x80 >> (bit % 8);
        v
    })
}

fn block_len(rng: &mut impl Rng, limit: usize) -> usize {
    let cap = match rng.gen_range(0..4) {
        0 => 4,
        1 | 2 => 16,
        _ => 64,
    };
    rng.gen_range(1..=cap.min(limit).max(1))
}

/// Applies between 1 and 32 random edits.
pub fn havoc(input: &[u8], rng: &mut impl Rng, max_len: usize) -> Vec<u8> {
    let mut v = input.to_vec();
    let stack = 1 << rng.gen_range(0..=5);
    for _ in 0..stack {
        match rng.gen_range(0..8) {
            0 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len() * 8);
                v[i / 8] ^= 0x80 >> (i % 8);
            }
            1 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] = rng.gen();
            }
            2 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] = INTERESTING[rng.gen_range(0..INTERESTING.len())];
            }
            3 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                let d: u8 = rng.gen_range(1..=35);
                v[i] = if rng.gen() { v[i].wrapping_add(d) } else { v[i].wrapping_sub(d) };
            }
            4 if v.len() > 1 => {
                let n = block_len(rng, v.len() - 1);
                let at = rng.gen_range(0..=v.len() - n);
                v.drain(at..at + n);
            }
            5 if !v.is_empty() && v.len() < max_len => {
                // duplicate a block of the input somewhere else in it
                let n = block_len(rng, v.len().min(max_len - v.len()));
                let from = rng.gen_range(0..=v.len() - n);
                let at = rng.gen_range(0..=v.len());
                let blk: Vec<u8> = v[from..from + n].to_vec();
                v.splice(at..at, blk);
            }
            6 if v.len() < max_len => {
                let n = block_len(rng, max_len - v.len());
                let at = rng.gen_range(0..=v.len());
                let blk: Vec<u8> = if rng.gen() {
                    vec![rng.gen(); n]
                } else {
                    (0..n).map(|_| rng.gen()).collect()
                };
                v.splice(at..at, blk);
            }
            7 if v.len() > 1 => {
                let n = block_len(rng, v.len() - 1);
                let from = rng.gen_range(0..=v.len() - n);
                let to = rng.gen_range(0..=v.len() - n);
                v.copy_within(from..from + n, to);
            }
            _ => {
                if v.len() < max_len {
                    v.push(rng.gen());
                }
            }
        }
    }
    v.truncate(max_len);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bitflips_cover_every_bit_once() {
        let flips: Vec<Vec<u8>> = bitflips(&[0, 0], 16).collect();
        assert_eq!(flips.len(), 16);
        assert_eq!(flips[0], [0x80, 0]);
        assert_eq!(flips[15], [0, 0x01]);
        assert_eq!(bitflips(&[0; 10], 4).count(), 32);
    }

    proptest! {
        #[test]
        fn havoc_respects_max_len(input in prop::collection::vec(any::<u8>(), 0..64), seed in any::<u64>(), max in 1usize..128) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input: Vec<u8> = input.into_iter().take(max).collect();
            for _ in 0..20 {
                prop_assert!(havoc(&input, &mut rng, max).len() <= max);
            }
        }

        #[test]
        fn havoc_is_deterministic(input in prop::collection::vec(any::<u8>(), 0..32), seed in any::<u64>()) {
            let a = havoc(&input, &mut ChaCha8Rng::seed_from_u64(seed), 256);
            let b = havoc(&input, &mut ChaCha8Rng::seed_from_u64(seed), 256);
            prop_assert_eq!(a, b);
        }
    }
}
