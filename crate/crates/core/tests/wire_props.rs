use cogsim::net::{ResponseBody, Status, WireMessage, WireRequest, WireResponse, WireTensor};
use cogsim::tensor::Precision;
use proptest::prelude::*;

fn precision() -> impl Strategy<Value = Precision> {
    prop_oneof![Just(Precision::F32), Just(Precision::F16), Just(Precision::Bf16)]
}

fn tensor() -> impl Strategy<Value = WireTensor> {
    (precision(), prop::collection::vec(0u32..5, 0..=8)).prop_flat_map(|(dtype, shape)| {
        let n = shape.iter().map(|&d| d as usize).product::<usize>() * dtype.width();
        prop::collection::vec(any::<u8>(), n).prop_map(move |payload| WireTensor {
            dtype,
            shape: shape.clone(),
            payload,
        })
    })
}

fn message() -> impl Strategy<Value = WireMessage> {
    let id = "[a-z0-9\\-]{0,40}";
    prop_oneof![
        (any::<u64>(), id, tensor()).prop_map(|(request_id, model_id, tensor)| WireMessage::Request(WireRequest {
            request_id,
            model_id,
            tensor
        })),
        (any::<u64>(), id, tensor()).prop_map(|(request_id, model_id, t)| WireMessage::Response(WireResponse {
            request_id,
            model_id,
            body: ResponseBody::Ok(t)
        })),
        (
            any::<u64>(),
            id,
            prop_oneof![Just(Status::UnknownModel), Just(Status::BadShape), Just(Status::ServerError)],
            ".{0,60}"
        )
            .prop_map(|(rid, mid, status, msg)| WireMessage::Response(WireResponse::error(rid, &mid, status, msg))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_identity(msg in message()) {
        let bytes = msg.encode().unwrap();
        prop_assert_eq!(WireMessage::decode(&bytes).unwrap(), msg.clone());
        let mut cursor = std::io::Cursor::new(bytes);
        prop_assert_eq!(WireMessage::read_from(&mut cursor).unwrap(), msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5000))]

    #[test]
    fn decoder_survives_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = WireMessage::decode(&bytes);
        let _ = WireMessage::read_from(&mut std::io::Cursor::new(bytes));
    }

    #[test]
    fn decoder_survives_mutated_frames(
        msg in message(),
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        cut in any::<prop::sample::Index>(),
    ) {
        let mut bytes = msg.encode().unwrap();
        for (at, v) in edits {
            let i = at.index(bytes.len());
            bytes[i] = v;
        }
        let keep = cut.index(bytes.len() + 1);
        if let Err(e) = WireMessage::decode(&bytes) {
            prop_assert!(e.offset <= bytes.len());
        }
        let _ = WireMessage::decode(&bytes[..keep]);
    }
}
