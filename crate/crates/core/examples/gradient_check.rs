//! Checks every analytic gradient of a small CNN against central differences,
//! then shows what a broken gradient looks like in the report.

use sor::nn::gradcheck::{compare_with_numeric, gradient_check, CheckProblem};
use sor::nn::loss::LossKind;
use sor::nn::{Activation, LayerSpec, ModelGraph};
use sor::rng::{stream, uniform};
use sor::Tensor;

fn main() -> sor::Result<()> {
    let mut rng = stream(7);
    let specs = vec![
        LayerSpec::conv2d(3, 1, 4),
        LayerSpec::relu(),
        LayerSpec::maxpool(2),
        LayerSpec::conv2d(3, 4, 4),
        LayerSpec::relu(),
        LayerSpec::GlobalAvgPool,
        LayerSpec::dense(4, 1, Activation::Sigmoid),
    ];
    let model = ModelGraph::new(vec![12, 12, 1], specs, &mut rng)?;
    println!("{} parameters", model.param_count());

    let inputs: Vec<Tensor> = (0..4)
        .map(|_| Tensor::new(vec![12, 12, 1], (0..144).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()))
        .collect::<sor::Result<_>>()?;
    let targets = vec![vec![1.0], vec![0.0], vec![0.0], vec![1.0]];
    let problem = CheckProblem {
        inputs: &inputs,
        targets: &targets,
        loss: LossKind::Bce,
        penalty: None,
    };

    let report = gradient_check(&model, &problem, 1e-5, 1e-4)?;
    println!(
        "checked {} partial derivatives, max relative error {:.2e}, {} failures",
        report.checked,
        report.max_rel_error,
        report.failures.len()
    );

    // Double one stored gradient and compare again.
    let mut broken = model.clone();
    problem.analytic(&mut broken)?;
    broken.layers[3].params[0].grad.data_mut()[10] *= 2.0;
    let report = compare_with_numeric(&broken, &problem, 1e-5, 1e-4)?;
    for f in &report.failures {
        println!(
            "layer {} {}[{}]: analytic {:.6e} numeric {:.6e}",
            f.layer, f.param, f.index, f.analytic, f.numeric
        );
    }
    Ok(())
}
