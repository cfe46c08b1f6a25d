//! KV-cache size for a few model shapes, and what a 4x budget saves.

use kvcrush::{kv_memory_bytes, TraceHeader};

fn main() -> kvcrush::Result<()> {
    let shapes = [
        ("opt-175b", 96, 96, 128, 8192, 128),
        ("llama-7b", 32, 32, 128, 4096, 1),
        ("mistral-7b kv", 32, 8, 128, 32768, 1),
    ];
    for (name, layers, heads, dim, seq, batch) in shapes {
        let header = TraceHeader {
            model_name: name.into(),
            num_layers: layers,
            num_heads: heads,
            head_dim: dim,
            seq_len: seq,
            precision: 2,
        };
        let full = kv_memory_bytes(&header, batch)?;
        let quarter = kv_memory_bytes(&TraceHeader { seq_len: seq / 4, ..header }, batch)?;
        let gib = |b: u64| b as f64 / (1u64 << 30) as f64;
        println!("{name:<14} batch {batch:>3}: {:>9.1} GiB full, {:>8.1} GiB at S/4", gib(full), gib(quarter));
    }
    Ok(())
}
