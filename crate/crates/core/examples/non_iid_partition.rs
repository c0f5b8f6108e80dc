//! Split a synthetic dataset across clients, IID and by label shards.
use fedfq::mlkit::{make_synthetic, partition_iid, partition_label_shard};
use fedfq::rng::seeded;

fn main() -> fedfq::Result<()> {
    let data = make_synthetic(10, 20, 200, 3.0, &mut seeded(0))?;
    let iid = partition_iid(&data, 20, &mut seeded(1))?;
    let shards = partition_label_shard(&data, 20, 2, &mut seeded(1))?;

    println!("mean label entropy (nats): iid {:.3}, two labels per client {:.3}", iid.mean_label_entropy(), shards.mean_label_entropy());
    for (k, client) in shards.clients.iter().take(5).enumerate() {
        println!("client {k}: {} samples, label counts {:?}", client.len(), client.label_counts());
    }
    Ok(())
}
