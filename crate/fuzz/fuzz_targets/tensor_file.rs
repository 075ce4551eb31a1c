#![no_main]

use dwafm::data::{decode_tensor, encode_tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(t) = decode_tensor::<f64>(bytes) {
        let again = decode_tensor::<f64>(&encode_tensor(&t)).expect("re-encoded tensor decodes");
        assert_eq!(t.shape(), again.shape());
    }
    let _ = decode_tensor::<f32>(bytes);
});
