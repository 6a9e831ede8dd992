mod common;

use common::*;
use nalgebra::DVector;
use rbirg_core::imaging::{
    apply_blur, blur_matrix, encode_pgm, parse_pgm, read_pgm, write_pgm, BlurKernel, Boundary,
    GrayImage,
};
use rand::Rng;

#[test]
fn blur_matrix_agrees_with_direct_convolution() {
    let mut r = rng(31);
    for case in 0..100 {
        let w = r.random_range(1..=12);
        let h = r.random_range(1..=12);
        let size = [1, 3, 5][case % 3];
        let taps: Vec<f64> = (0..size * size).map(|_| r.random_range(0.0..1.0)).collect();
        let k = BlurKernel::normalized(size, taps).unwrap();
        let boundary = if case % 2 == 0 { Boundary::Zero } else { Boundary::Replicate };
        let img = GrayImage::new(w, h, (0..w * h).map(|_| r.random_range(0.0..1.0)).collect())
            .unwrap();
        let a = blur_matrix(&k, w, h, boundary).unwrap();
        let via_matrix = &a * DVector::from_column_slice(img.pixels());
        let direct = apply_blur(&k, &img, boundary);
        let err = dist(via_matrix.as_slice(), direct.pixels());
        assert!(err <= 1e-12, "case {case}: {err}");
    }
}

#[test]
fn replicate_rows_sum_to_one() {
    let k = BlurKernel::gaussian(5, 1.0).unwrap();
    let a = blur_matrix(&k, 9, 7, Boundary::Replicate).unwrap();
    for row in a.row_iter() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn pgm_round_trip_of_eight_bit_images() {
    let mut r = rng(5);
    let pixels: Vec<f64> = (0..35).map(|_| r.random_range(0..=255) as f64 / 255.0).collect();
    let img = GrayImage::new(7, 5, pixels).unwrap();
    let back = parse_pgm(&encode_pgm(&img)).unwrap();
    assert_eq!(back, img);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.pgm");
    write_pgm(&img, &path).unwrap();
    assert_eq!(read_pgm(&path).unwrap(), img);
}

#[test]
fn pgm_ascii_and_sixteen_bit() {
    let ascii = parse_pgm(b"P2\n# c\n2 1\n10\n0 10\n").unwrap();
    assert_eq!(ascii.pixels(), &[0.0, 1.0]);
    let wide = parse_pgm(b"P5 1 1 65535\n\xff\xff").unwrap();
    assert_eq!(wide.pixels(), &[1.0]);
    assert!(parse_pgm(b"P5 2 2 255\n\x00").is_err());
    assert!(parse_pgm(b"P6 1 1 255\n\x00\x00\x00").is_err());
}
