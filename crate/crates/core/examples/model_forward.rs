//! Runs the toy tracking and reconstruction network over a random spike
//! train and prints per-step outputs.

use neuroscatter::model::{ArchConfig, SnnModel};
use neuroscatter::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> neuroscatter::Result<()> {
    let arch = ArchConfig { in_h: 32, in_w: 32, time_steps: 6, ..ArchConfig::toy() };
    let mut model = SnnModel::<f32>::new(arch.clone(), 1)?;
    println!("toy network at {}x{}: {} learnable parameters", arch.in_h, arch.in_w, model.param_count());
    println!("OTM readout layer: {}", model.otm_readout_path());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::inference();
    for t in 0..arch.time_steps {
        let x = Tensor::from_fn(&[1, 2, 32, 32], |_| if rng.random_bool(0.1) { 1.0 } else { 0.0 });
        let out = model.step(&mut tape, &x, None)?;
        let track = tape.value(out.track).data().to_vec();
        let recon = tape.value(out.recon_final);
        let mean = recon.sum() / recon.len() as f32;
        println!("t={t}  track ({:.3}, {:.3})  recon mean {mean:.4}  sup maps {}", track[0], track[1], out.sup.len());
    }
    Ok(())
}
