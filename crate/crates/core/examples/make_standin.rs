//! Writes the synthetic stand-in covariate table used for CI:
//! `cargo run -p intact-vae --example make_standin > data/ihdp_standin.csv`

use intact_vae::semisynth;

fn main() {
    let table = semisynth::make_standin_table(30, 20240501);
    let mut out = Vec::new();
    semisynth::write_covariates(&mut out, &table).expect("serialize table");
    print!("{}", String::from_utf8(out).expect("utf8"));
}
