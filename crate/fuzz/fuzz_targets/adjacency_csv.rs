#![no_main]

use dwafm::data::PredefinedGraph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (u8, &[u8])| {
    let (n, bytes) = input;
    let n = 1 + n as usize % 32;
    if let Ok(g) = PredefinedGraph::from_csv(bytes, n) {
        for i in 0..n {
            assert!(g.is_connected(i, i));
            for j in 0..n {
                assert_eq!(g.is_connected(i, j), g.is_connected(j, i));
            }
        }
    }
});
