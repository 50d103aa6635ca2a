//! Fuses one pair of feature rows with each of the seven strategies and
//! prints output width and parameter count at desk and reference widths.

use mmfuse::fusion::{FusionBlock, FusionKind};
use mmfuse::models::Profile;
use mmfuse::rng::stream;
use mmfuse::{Graph, Mode, ParamSet, Tensor};

fn main() -> mmfuse::Result<()> {
    let (d1, d2) = (50, 126);
    let desk = Profile::desk();
    let reference = Profile::reference();
    println!("{:<14} {:>8} {:>12} {:>12}", "strategy", "out", "desk params", "ref params");
    for kind in FusionKind::ALL {
        let cfg = desk.fusion(kind, d1, d2);
        let mut params = ParamSet::<f32>::new();
        let block = FusionBlock::new(cfg.clone(), &mut params, "f", &mut stream(0, 1, 0))?;
        let mut g = Graph::with_params(&params);
        let a = g.input(Tensor::full(&[4, d1], 0.3))?;
        let b = g.input(Tensor::full(&[4, d2], -0.2))?;
        let z = block.forward(&mut g, a, b, Mode::eval())?;
        let out = g.value(z);
        let full = reference.fusion(kind, d1, d2).parameter_count()?;
        println!("{:<14} {:>8} {:>12} {:>12}", kind.name(), out.cols(), cfg.parameter_count()?, full);
    }
    Ok(())
}
