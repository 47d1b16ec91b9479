//! Record a tiny conv net on the tape, backpropagate, take AdamW steps.

use aeforge::tensor::{AdamW, AdamWConfig, Graph, ParamSet, Parameter, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut params = ParamSet::<f32>::new();
    params.push(Parameter::new("conv.weight", Tensor::filled(vec![2, 1, 3, 3], 0.1)))?;
    params.push(Parameter::new("conv.bias", Tensor::zeros(vec![2])))?;
    let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|v| v as f32 / 16.0).collect())?;
    let target = Tensor::filled(vec![1, 2, 4, 4], 0.5);

    let mut opt = AdamW::new(AdamWConfig::default(), &params);
    for step in 1..=5 {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (xv, tv) = (g.input(x.clone()), g.input(target.clone()));
        let y = g.conv2d(xv, vars[0], vars[1], 1, 1)?;
        let y = g.silu(y)?;
        let loss = g.mse(y, tv)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        params.absorb_grads(&grads, &vars)?;
        opt.step(&mut params, 0.05)?;
        println!("step {step}: loss {value:.6}");
    }
    Ok(())
}
