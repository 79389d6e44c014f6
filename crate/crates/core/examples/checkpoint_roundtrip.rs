//! Saves a model with its optimizer state, reloads it, and checks that the
//! reloaded network produces identical outputs.

use neuroscatter::model::{ArchConfig, SnnModel};
use neuroscatter::tensor::{Tape, Tensor};
use neuroscatter::train::{AdamW, Checkpoint, RunRecord, TrainConfig};

fn outputs(model: &mut SnnModel<f32>, xs: &[Tensor<f32>]) -> neuroscatter::Result<Vec<f32>> {
    model.reset_states();
    let mut tape = Tape::inference();
    let mut out = Vec::new();
    for x in xs {
        let o = model.step(&mut tape, x, None)?;
        out.extend_from_slice(tape.value(o.recon_final).data());
        out.extend_from_slice(tape.value(o.track).data());
    }
    Ok(out)
}

fn main() -> neuroscatter::Result<()> {
    let arch = ArchConfig::tiny();
    let mut model = SnnModel::<f32>::new(arch.clone(), 8)?;
    let train = TrainConfig::default();
    let opt = AdamW::new(train.optimizer, model.params());
    let ck = Checkpoint::from_model(&model, &train, 0xda7a, &opt, &RunRecord::default());

    let path = std::env::temp_dir().join("neuroscatter_example.ckpt");
    ck.write(&path)?;
    let mut back = Checkpoint::read(&path)?.into_model(Some(&arch))?;
    println!("wrote {} ({} parameters)", path.display(), back.param_count());

    let xs: Vec<Tensor<f32>> = (0..arch.time_steps)
        .map(|t| Tensor::from_fn(&[1, 2, arch.in_h, arch.in_w], |i| ((i * 31 + t * 7) % 5 == 0) as u8 as f32))
        .collect();
    let (a, b) = (outputs(&mut model, &xs)?, outputs(&mut back, &xs)?);
    assert_eq!(a, b);
    println!("reloaded model reproduces all {} outputs exactly", a.len());

    let other = ArchConfig { enc_channels: vec![4, 4], ..arch };
    match Checkpoint::read(&path)?.into_model(Some(&other)) {
        Err(e) => println!("loading into a different architecture is refused: {e}"),
        Ok(_) => unreachable!("architecture mismatch accepted"),
    }
    Ok(())
}
