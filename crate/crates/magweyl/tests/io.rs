//! JSON container round trips.

mod common;

use magweyl::geometry::{Parameters, VectorPotential};
use magweyl::grid::{GridSpec, WaveFunction};
use magweyl::io::{Container, ContainerKind};
use magweyl::quantizer::quantize;

use common::gaussian_symbol;

#[test]
fn symbol_round_trip_is_bit_exact() {
    let grid = GridSpec::new(2, 8, 6.0).unwrap();
    let mut f = gaussian_symbol(&grid, [0.3, -0.1], [0.2, 0.5], 0.9);
    f.order = Some(-1.0);
    let c = Container::from_symbol(&f);
    assert_eq!(c.shape, vec![64, 64]);
    let back = Container::from_json(&c.to_json().unwrap()).unwrap().to_symbol().unwrap();
    assert_eq!(back, f);
}

#[test]
fn wave_function_and_kernel_round_trips() {
    let grid = GridSpec::new(1, 16, 8.0).unwrap();
    let params = Parameters::new(0.5, 0.7).unwrap();
    let h = grid.hilbert(params.eps).unwrap();
    let u = WaveFunction::gaussian(h, &[0.4], &[-0.3], 1.0);
    let back = Container::from_json(&Container::from_wave_function(&u).to_json().unwrap())
        .unwrap()
        .to_wave_function()
        .unwrap();
    assert_eq!(back, u);

    let a = VectorPotential::parse(&["0.3*sin(x1)"], "test").unwrap();
    let k = quantize(&gaussian_symbol(&grid, [0.0; 2], [0.0; 2], 1.0), &a, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kernel.json");
    Container::from_kernel(&k).write(&path).unwrap();
    let read = Container::read(&path).unwrap();
    assert_eq!(read.kind, ContainerKind::Kernel);
    assert_eq!(read.values[1], [k.matrix[(0, 1)].re, k.matrix[(0, 1)].im]);
    assert_eq!(read.to_kernel().unwrap(), k);
}

#[test]
fn malformed_containers_are_rejected() {
    let grid = GridSpec::new(1, 8, 4.0).unwrap();
    let f = gaussian_symbol(&grid, [0.0; 2], [0.0; 2], 1.0);
    let mut c = Container::from_symbol(&f);
    assert!(c.to_wave_function().is_err());
    c.values.pop();
    assert!(c.to_symbol().is_err());
    let mut text = Container::from_symbol(&f).to_json().unwrap();
    text.insert_str(1, "\"stray\":1,");
    assert!(Container::from_json(&text).is_err());
    let mut w = Container::from_symbol(&f);
    w.values[0] = [f64::from_bits(0x3fb999999999999a), 0.0];
    let again = Container::from_json(&w.to_json().unwrap()).unwrap();
    assert_eq!(again.values[0][0].to_bits(), 0x3fb999999999999a);
}
