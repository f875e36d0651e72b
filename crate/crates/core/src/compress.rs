//! Run-length codec for preserved page payloads.
//!
//! Packbits-style framing: a control byte `c` introduces either a literal run
//! (`c < 128`, the next `c + 1` bytes verbatim) or a repeat run (`c >= 128`,
//! the next byte repeated `c - 126` times). Worst case grows incompressible
//! input by one byte per 128, so callers fall back to storing raw when the
//! encoded form is not smaller.

const MAX_LITERAL: usize = 128;
const MAX_RUN: usize = 129;

pub fn rle_compress(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len() / 4 + 16);
    let mut i = 0;
    let mut literal_start = 0;

    let flush_literal = |out: &mut Vec<u8>, from: usize, to: usize, input: &[u8]| {
        let mut start = from;
        while start < to {
            let len = (to - start).min(MAX_LITERAL);
            out.push((len - 1) as u8);
            out.extend_from_slice(&input[start..start + len]);
            start += len;
        }
    };

    while i < input.len() {
        let b = input[i];
        let mut run = 1;
        while i + run < input.len() && input[i + run] == b && run < MAX_RUN {
            run += 1;
        }
        if run >= 3 {
            flush_literal(&mut out, literal_start, i, input);
            out.push((run + 126) as u8);
            out.push(b);
            i += run;
            literal_start = i;
        } else {
            i += run;
        }
    }
    flush_literal(&mut out, literal_start, input.len(), input);
    out
}

pub fn rle_decompress(input: &[u8], expected_len: usize) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(expected_len);
    let mut i = 0;
    while i < input.len() {
        let c = input[i] as usize;
        i += 1;
        if c < 128 {
            let len = c + 1;
            if i + len > input.len() {
                return None;
            }
            out.extend_from_slice(&input[i..i + len]);
            i += len;
        } else {
            let len = c - 126;
            let b = *input.get(i)?;
            i += 1;
            out.extend(std::iter::repeat(b).take(len));
        }
        if out.len() > expected_len {
            return None;
        }
    }
    if out.len() == expected_len {
        Some(out)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_page_shrinks_hard() {
        let page = vec![0u8; 4096];
        let packed = rle_compress(&page);
        assert!(packed.len() < 80, "got {}", packed.len());
        assert_eq!(rle_decompress(&packed, 4096).unwrap(), page);
    }

    #[test]
    fn worst_case_growth_is_bounded() {
        // Strictly alternating bytes never form a run.
        let page: Vec<u8> = (0..4096).map(|i| (i % 2) as u8 * 0xFF).collect();
        let packed = rle_compress(&page);
        assert!(packed.len() <= 4096 + 4096 / 128);
    }

    #[test]
    fn short_runs_stay_literal() {
        let data = [1, 1, 2, 3, 3, 4];
        let packed = rle_compress(&data);
        assert_eq!(rle_decompress(&packed, data.len()).unwrap(), data);
    }

    proptest! {
        #[test]
        fn roundtrip(data in proptest::collection::vec(any::<u8>(), 0..6000)) {
            let packed = rle_compress(&data);
            prop_assert_eq!(rle_decompress(&packed, data.len()).unwrap(), data);
        }

        #[test]
        fn roundtrip_runs(runs in proptest::collection::vec((any::<u8>(), 1usize..400), 0..40)) {
            let mut data = Vec::new();
            for (b, n) in runs {
                data.extend(std::iter::repeat(b).take(n));
            }
            let packed = rle_compress(&data);
            prop_assert_eq!(rle_decompress(&packed, data.len()).unwrap(), data);
        }
    }
}
