//! Alignment exports: long-form CSV and binary greymap images.

use std::fmt::Write as _;

use super::AlignmentMatrix;

/// `t,n,p` with one line per cell, rows in step order.
pub fn alignment_csv(alignment: &AlignmentMatrix) -> String {
    let mut out = String::from("t,n,p\n");
    for (t, row) in alignment.rows().outer_iter().enumerate() {
        for (n, p) in row.iter().enumerate() {
            writeln!(out, "{t},{n},{p}").unwrap();
        }
    }
    out
}

/// Binary PGM (P5): width = phonemes, height = steps, pixel =
/// `round(255 * p)`.
pub fn alignment_pgm(alignment: &AlignmentMatrix) -> Vec<u8> {
    let (h, w) = alignment.rows().dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        alignment
            .rows()
            .iter()
            .map(|p| (255.0 * p.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_and_pgm() {
        let a = AlignmentMatrix::from_rows(array![[1.0, 0.0], [0.25, 0.75]]);
        assert_eq!(alignment_csv(&a), "t,n,p\n0,0,1\n0,1,0\n1,0,0.25\n1,1,0.75\n");
        let pgm = alignment_pgm(&a);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 0, 64, 191]);
    }
}
