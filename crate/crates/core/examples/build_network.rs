//! Parses a skeleton, expands it with random-feature and inducing-point
//! recipes, and runs a forward pass with the initial weights.

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::blocks::{build_network, BiasMode, BuildPolicy, NodeRecipe};
use bnn_skeleton::kernels::KernelSpec;
use bnn_skeleton::skeleton::Skeleton;
use bnn_skeleton::tensor::Matrix;

const CONFIG: &str = r#"
layers      = [2, 2, 1]
widths      = [[2, 1], 3, 1]
activations = ["none", "tanh", "identity"]
edges       = [[[0], [0, 1]], [[0, 1]]]
"#;

fn main() -> bnn_skeleton::error::Result<()> {
    let sk = Skeleton::parse(CONFIG)?;
    println!("canonical form:\n{}", sk.to_toml());

    let x = Matrix::from_fn(16, sk.input_dim(), |i, j| ((i + 1) as f64 * (j + 2) as f64).cos());
    let policy = BuildPolicy::uniform(NodeRecipe::random(32, ActivationKind::Relu), 7)
        .with_node(1, 1, NodeRecipe::inducing(6, KernelSpec::Rbf { lengthscale: 1.0 }))
        .with_layer(2, NodeRecipe::plain())
        .with_bias(BiasMode::TrainableInFb);
    let net = build_network(&sk, &policy, Some(&x))?;

    for ((l, i), stage) in net.stages() {
        println!("node ({l},{i}): feature stage with {} outputs", stage.output_dim());
    }
    for (g, (rows, cols)) in net.weight_shapes().into_iter().enumerate() {
        println!("FB {g}: {rows} x {cols}");
    }
    println!("{} trainable weights", net.parameter_count());

    let trace = net.forward(&x, &net.initial_weights())?;
    let y = trace.output();
    println!("output {}x{}, first rows {:?}", y.rows(), y.cols(), &y.data()[..4]);
    Ok(())
}
