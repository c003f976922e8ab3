use lumen::codec::*;
use lumen::{Grid, Mask};
use proptest::prelude::*;

fn spec(kind: PatternKind, t: usize, w: usize) -> PatternSpec {
    PatternSpec::new(kind, t, w).unwrap()
}

// Independent bit-string oracle: MSB-first binary, then reflected Gray by
// the textbook recursive construction.
fn binary_bits(code: u32, t: usize) -> Vec<bool> {
    (0..t).map(|i| (code >> (t - 1 - i)) & 1 == 1).collect()
}

fn reflected_gray(t: usize) -> Vec<Vec<bool>> {
    if t == 0 {
        return vec![vec![]];
    }
    let prev = reflected_gray(t - 1);
    let mut out = Vec::new();
    for c in &prev {
        let mut v = vec![false];
        v.extend(c);
        out.push(v);
    }
    for c in prev.iter().rev() {
        let mut v = vec![true];
        v.extend(c);
        out.push(v);
    }
    out
}

fn runs(row: &[bool]) -> usize {
    1 + row.windows(2).filter(|w| w[0] != w[1]).count()
}

fn column_stack(spec: &PatternSpec, height: usize) -> (PatternStack, Grid<u32>) {
    let cols = Grid::from_fn(spec.code_width, height, |x, _| x as u32);
    let stack = generate_stack(spec, &cols, &Mask::filled(spec.code_width, height, true)).unwrap();
    (stack, cols)
}

#[test]
fn stripes_match_bit_oracles() {
    let b = spec(PatternKind::Binary, 8, 256);
    let g = spec(PatternKind::Gray, 8, 256);
    let gray = reflected_gray(8);
    for (col, gray_bits) in gray.iter().enumerate() {
        let want = binary_bits(col as u32, 8);
        for n in 1..=8 {
            assert_eq!(stripe(&b, n, col).unwrap(), want[n - 1], "binary col {col} n {n}");
            assert_eq!(stripe(&g, n, col).unwrap(), gray_bits[n - 1], "gray col {col} n {n}");
        }
    }
}

#[test]
fn binary_runs_double_per_pattern() {
    for w in [256usize, 512] {
        let s = spec(PatternKind::Binary, 8, w);
        for n in 1..=8 {
            let row: Vec<bool> = (0..w).map(|c| stripe(&s, n, c).unwrap()).collect();
            assert_eq!(runs(&row), 1 << n, "w {w} n {n}");
        }
    }
}

#[test]
fn gray_first_pattern_matches_binary_and_neighbours_differ_in_one_bit() {
    let g = spec(PatternKind::Gray, 8, 256);
    let b = spec(PatternKind::Binary, 8, 256);
    for c in 0..256 {
        assert_eq!(stripe(&g, 1, c).unwrap(), stripe(&b, 1, c).unwrap());
    }
    for c in 0..255 {
        let diff = (1..=8)
            .filter(|&n| stripe(&g, n, c).unwrap() != stripe(&g, n, c + 1).unwrap())
            .count();
        assert_eq!(diff, 1, "columns {c},{}", c + 1);
    }
}

#[test]
fn encode_decode_all_columns() {
    for kind in [PatternKind::Binary, PatternKind::Gray] {
        let s = spec(kind, 8, 256);
        let (stack, cols) = column_stack(&s, 2);
        let codes = decode(&s, &binarize(&stack, DEFAULT_THRESHOLD)).unwrap();
        for y in 0..2 {
            for x in 0..256 {
                assert_eq!(codes.code(x, y), Some(*cols.get(x, y)), "{kind:?} col {x}");
            }
        }
    }
}

#[test]
fn wide_projector_resolves_to_code_bins() {
    let s = spec(PatternKind::Gray, 6, 256);
    let (stack, _) = column_stack(&s, 1);
    let codes = decode(&s, &binarize(&stack, DEFAULT_THRESHOLD)).unwrap();
    for x in 0..256 {
        assert_eq!(codes.code(x, 0), Some((x / 4) as u32));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(PatternSpec::new(PatternKind::Binary, 0, 256).is_err());
    assert!(PatternSpec::new(PatternKind::Binary, 17, 256).is_err());
    let s = spec(PatternKind::Binary, 8, 256);
    assert!(stripe(&s, 0, 0).is_err());
    assert!(stripe(&s, 9, 0).is_err());
    assert!(stripe(&s, 1, 256).is_err());
    assert!("hamming".parse::<PatternKind>().is_err());
}

#[test]
fn masked_pixels_are_black_and_undecodable() {
    let s = spec(PatternKind::Binary, 8, 256);
    let cols = Grid::filled(4, 1, 255u32);
    let mask = Grid::from_fn(4, 1, |x, _| x != 2);
    let stack = generate_stack(&s, &cols, &mask).unwrap();
    for n in 0..8 {
        assert_eq!(stack.get(2, 0, n), 0.0);
        assert_eq!(stack.get(0, 0, n), 1.0);
    }
}

// Brute-force oracle: smallest shift with an equal code.
fn code_match_oracle(left: &[Option<u32>], right: &[Option<u32>], u: usize) -> Vec<Option<usize>> {
    (0..left.len())
        .map(|x| {
            let c = left[x]?;
            (0..=u.min(x)).find(|&s| right[x - s] == Some(c))
        })
        .collect()
}

fn code_map(row: &[Option<u32>]) -> CodeMap {
    let w = row.len();
    CodeMap {
        codes: Grid::from_fn(w, 1, |x, _| row[x].unwrap_or(0)),
        valid: Grid::from_fn(w, 1, |x, _| row[x].is_some()),
    }
}

#[test]
fn code_match_known_shift() {
    let left: Vec<Option<u32>> = (0..32).map(|x| Some(x as u32)).collect();
    let right: Vec<Option<u32>> = (0..32).map(|x| Some(x as u32 + 5)).collect();
    let d = code_match_disparity(&code_map(&left), &code_map(&right), 8).unwrap();
    for x in 0..32 {
        if x >= 5 {
            assert_eq!(d.get(x, 0), Some(5.0));
        } else {
            assert_eq!(d.get(x, 0), None);
        }
    }
}

proptest! {
    #[test]
    fn gray_roundtrip(c in 0u32..(1 << 24)) {
        prop_assert_eq!(gray_decode(gray_encode(c)), c);
        prop_assert_eq!((gray_encode(c) ^ gray_encode(c + 1)).count_ones(), 1);
    }

    #[test]
    fn encode_decode_identity(t in 1usize..=10, extra in 0usize..3, gray in any::<bool>()) {
        let kind = if gray { PatternKind::Gray } else { PatternKind::Binary };
        let w = 1usize << (t + extra);
        let s = spec(kind, t, w);
        let (stack, _) = column_stack(&s, 1);
        let codes = decode(&s, &binarize(&stack, DEFAULT_THRESHOLD)).unwrap();
        for x in 0..w {
            prop_assert_eq!(codes.code(x, 0), Some(s.column_code(x).unwrap()));
        }
    }

    #[test]
    fn code_match_equals_oracle(
        left in proptest::collection::vec(proptest::option::weighted(0.8, 0u32..6), 1..40),
        right_seed in proptest::collection::vec(proptest::option::weighted(0.8, 0u32..6), 40),
        u in 1usize..12,
    ) {
        let right = &right_seed[..left.len()];
        let d = code_match_disparity(&code_map(&left), &code_map(right), u as i64).unwrap();
        let want = code_match_oracle(&left, right, u);
        for (x, w) in want.iter().enumerate() {
            prop_assert_eq!(d.get(x, 0), w.map(|s| s as f64));
        }
    }
}
