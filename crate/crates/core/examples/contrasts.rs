//! Contrast matrices for one-way and factorial layouts.

use ancova_mctp::design::{
    build_design, contrast, factorial_contrast, AncovaDataset, CellId, ContrastKind, ContrastMatrix, EffectSpec,
};
use nalgebra::DMatrix;

fn show(title: &str, c: &ContrastMatrix) {
    println!("{title}");
    for (label, row) in c.labels().iter().zip(c.matrix().row_iter()) {
        let coef: Vec<String> = row.iter().map(|v| format!("{v:>6.3}")).collect();
        println!("  {label:<18} {}", coef.join(" "));
    }
    println!();
}

fn main() -> ancova_mctp::Result<()> {
    let cells: Vec<String> = ["placebo", "low", "mid", "high"].iter().map(|s| s.to_string()).collect();
    for kind in [ContrastKind::Dunnett, ContrastKind::Tukey, ContrastKind::GrandMean] {
        show(&format!("{kind:?}"), &contrast(kind, 4)?.with_cell_labels(&cells)?);
    }

    let custom = ContrastMatrix::user_defined(
        DMatrix::from_row_slice(1, 4, &[-3.0, -1.0, 1.0, 3.0]),
        vec!["linear trend".into()],
    )?;
    show("user defined", &custom);

    // A 3 x 2 grid: dose (0, 10, 100) by sex.
    let mut groups = Vec::new();
    for dose in ["0", "10", "100"] {
        for sex in ["F", "M"] {
            groups.extend([CellId::new([dose, sex]), CellId::new([dose, sex])]);
        }
    }
    let y: Vec<f64> = (0..groups.len()).map(|i| i as f64).collect();
    let data = AncovaDataset::new(y, groups, DMatrix::zeros(12, 0))?
        .with_factor_names(vec!["dose".into(), "sex".into()])?;
    let design = build_design(&data)?;
    let layout = design.factor_layout()?;
    println!("cells: {}\n", design.cell_labels().join(", "));
    show("dose main effect (Dunnett base)", &factorial_contrast(&"dose".parse::<EffectSpec>()?, &layout, ContrastKind::Dunnett)?);
    show("dose x sex interaction", &factorial_contrast(&"dose:sex".parse::<EffectSpec>()?, &layout, ContrastKind::GrandMean)?);
    Ok(())
}
