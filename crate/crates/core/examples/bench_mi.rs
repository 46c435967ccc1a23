use mimo_shaping::linalg::expm_skew_hermitian;
use mimo_shaping::mi::{estimate_mi, gradients, McConfig};
use mimo_shaping::model::build_joint;
use mimo_shaping::{AntennaShaping, EquivalentChannel, PrecoderState};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    let s = AntennaShaping::uniform(16).unwrap();
    let joint = build_joint(&[s.clone(), s]).unwrap();
    let r = DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.0, 0.3),
            Complex64::new(0.7, -0.2),
            Complex64::new(-0.7, -0.2),
            Complex64::new(0.0, -0.5),
        ],
    );
    let mc = McConfig::new(1000, 1).unwrap();
    for (label, prec) in [
        ("identity", PrecoderState::initial(2, 2.0).unwrap()),
        ("mixing", PrecoderState::from_parts(vec![1.2, 0.748], expm_skew_hermitian(&r, 1.0)).unwrap()),
    ] {
        for snr_db in [0.0, 10.0, 20.0] {
            let noise = 2.0 / (2.0 * 10f64.powf(snr_db / 10.0));
            let eq = EquivalentChannel::new(vec![1.3416, 0.4472], noise).unwrap();
            let t = Instant::now();
            let v = estimate_mi(&eq, &prec, &joint, &mc).unwrap();
            let a = t.elapsed();
            let t = Instant::now();
            gradients(&eq, &prec, &joint, &mc).unwrap();
            let b = t.elapsed();
            println!("{label} {snr_db} dB: {:.4} bits, mi {a:.2?} grads {b:.2?}", v.bits);
        }
    }
}
