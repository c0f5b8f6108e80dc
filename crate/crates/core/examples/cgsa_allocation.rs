//! Allocate a bit budget over a heavy-tailed vector with simulated annealing
//! and check it against the exact dynamic program.
use fedfq::cgsa::{cgsa_optimize, dp_oracle, initial_allocation, objective, CgsaParams};
use fedfq::rng::seeded;
use fedfq::DenseVector;
use rand_distr::{Distribution, LogNormal};

fn main() -> fedfq::Result<()> {
    let mut rng = seeded(3);
    let tail = LogNormal::new(0.0, 2.0).unwrap();
    let h = DenseVector::from_f64(&(0..256).map(|_| tail.sample(&mut rng)).collect::<Vec<_>>())?;
    let budget = 512;

    let start = initial_allocation(&h, budget)?;
    let annealed = cgsa_optimize(&h, budget, &CgsaParams::default(), &mut rng)?;
    let exact = dp_oracle(&h, budget)?;

    for (name, a) in [("greedy start", &start), ("annealed", &annealed), ("exact", &exact)] {
        let [zero, two, four, eight] = a.rung_counts();
        println!(
            "{name:<13} objective {:.6e}  bits {}/{}  counts 0:{zero} 2:{two} 4:{four} 8:{eight}",
            objective(&h, a)?,
            a.used_bits(),
            budget
        );
    }
    let gap = objective(&h, &annealed)? / objective(&h, &exact)? - 1.0;
    println!("relative gap {gap:.2e}");
    Ok(())
}
