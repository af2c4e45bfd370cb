//! Pins seeded outputs against checked-in fixtures. A missing fixture is
//! written on first run; delete it to regenerate after an intended change.

use std::fs;
use std::path::PathBuf;

use lapar_core::dictionary::random_dictionary;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn check_or_write(name: &str, text: &str) {
    let path = fixture(name);
    match fs::read_to_string(&path) {
        Ok(expected) => assert_eq!(text, expected, "{} changed", path.display()),
        Err(_) => fs::write(&path, text).unwrap(),
    }
}

#[test]
fn random_dictionary_seed_0() {
    let d = random_dictionary(0, 14, 5).unwrap();
    let mut text = String::new();
    for row in 0..d.len() {
        let taps: Vec<String> = d.row(row).iter().map(|v| format!("{v:.17e}")).collect();
        text.push_str(&taps.join(" "));
        text.push('\n');
    }
    check_or_write("random_dictionary_seed0_l14_k5.txt", &text);
}
