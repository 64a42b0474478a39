//! Synthetic fleets.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Vin;

/// Model codes (VIN positions 4-8) issued to simulated vehicles.
pub const MODEL_CODES: &[&str] = &["XK40E", "CK40E", "EX30A", "EX90A"];
const YEAR_CODES: &[char] = &['L', 'M', 'N', 'P', 'R'];
const PLANT_CODES: &[char] = &['2', 'G', 'J', 'T'];
const WMI: &str = "YV1";

fn transliterate(c: u8) -> u32 {
    match c {
        b'0'..=b'9' => u32::from(c - b'0'),
        b'A' | b'J' => 1,
        b'B' | b'K' | b'S' => 2,
        b'C' | b'L' | b'T' => 3,
        b'D' | b'M' | b'U' => 4,
        b'E' | b'N' | b'V' => 5,
        b'F' | b'W' => 6,
        b'G' | b'P' | b'X' => 7,
        b'H' | b'Y' => 8,
        b'R' | b'Z' => 9,
        _ => 0,
    }
}

/// The position-9 check character of the North American VIN scheme.
pub fn check_character(vin: &[u8; 17]) -> u8 {
    const WEIGHTS: [u32; 17] = [8, 7, 6, 5, 4, 3, 2, 10, 0, 9, 8, 7, 6, 5, 4, 3, 2];
    let sum: u32 = vin
        .iter()
        .zip(WEIGHTS)
        .map(|(c, w)| transliterate(*c) * w)
        .sum();
    match sum % 11 {
        10 => b'X',
        d => b'0' + d as u8,
    }
}

/// Builds a VIN from its parts and fills in the check character.
pub fn make_vin(model_code: &str, year: char, plant: char, serial: u32) -> Vin {
    let raw = format!("{WMI}{model_code}0{year}{plant}{:06}", serial % 1_000_000);
    let mut bytes: [u8; 17] = raw.as_bytes().try_into().expect("17 characters");
    bytes[8] = check_character(&bytes);
    Vin::parse(std::str::from_utf8(&bytes).expect("ascii")).expect("well-formed parts")
}

/// `n` distinct VINs drawn deterministically from `seed`. Serial numbers are
/// consecutive from a seeded offset, so `n` up to one million never collide.
pub fn generate_vins(n: usize, seed: u64) -> Vec<Vin> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let offset: u32 = rng.random_range(0..1_000_000);
    (0..n)
        .map(|i| {
            let model = MODEL_CODES.choose(&mut rng).expect("non-empty");
            let year = *YEAR_CODES.choose(&mut rng).expect("non-empty");
            let plant = *PLANT_CODES.choose(&mut rng).expect("non-empty");
            make_vin(
                model,
                year,
                plant,
                offset.wrapping_add(i as u32) % 1_000_000,
            )
        })
        .collect()
}
