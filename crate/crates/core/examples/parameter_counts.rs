//! Parameter budgets of every architecture at reference widths.

use mmfuse::experiment::{suite_configs, unimodal_configs};
use mmfuse::models::{ModelConfig, Profile};

fn main() -> mmfuse::Result<()> {
    let p = Profile::reference();
    for c in unimodal_configs(&p).into_iter().chain(suite_configs(&p)) {
        let b = c.parameter_breakdown()?;
        println!(
            "{:<26} {:>10} (encoders {}, fusion {}, classifier {}, heads {})",
            c.label(),
            b.total(),
            b.encoders,
            b.fusion,
            b.classifier,
            b.heads
        );
    }
    let heads = ModelConfig::autofraudnet(true, &p).parameter_count()?;
    let plain = ModelConfig::autofraudnet(false, &p).parameter_count()?;
    println!("auxiliary heads add {} parameters", heads - plain);
    Ok(())
}
