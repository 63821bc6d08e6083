//! Proptest strategies over protocol messages.

use proptest::collection::vec;
use proptest::prelude::*;
use utoe_core::rpc::{ErrorCode, KernelFootprint, Message};

fn text(max: usize) -> impl Strategy<Value = String> {
    // multi-byte characters exercise the byte-length prefix
    proptest::string::string_regex(&format!("[a-zA-Z0-9 _.:é☃-]{{0,{max}}}")).expect("valid regex")
}

/// Every message variant with field values spanning their full ranges.
/// Variable-length fields stay small enough for a 512-byte buffer.
pub fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        any::<u8>().prop_map(|proto_version| Message::Hello { proto_version }),
        (text(40), any::<u32>()).prop_map(|(board_name, buffer_size)| Message::HelloAck { board_name, buffer_size }),
        (any::<u32>(), vec(any::<u8>(), 0..=400)).prop_map(|(offset, bytes)| Message::LoadModelChunk { offset, bytes }),
        (any::<u32>(), any::<u32>()).prop_map(|(total_len, checksum)| Message::LoadDone { total_len, checksum }),
        Just(Message::MemQuery),
        (any::<u32>(), any::<u32>(), vec((any::<u32>(), any::<u32>()), 0..=40)).prop_map(|(m, s, k)| {
            Message::MemReport {
                memory_bytes: m,
                storage_bytes: s,
                per_kernel: k
                    .into_iter()
                    .map(|(memory_bytes, storage_bytes)| KernelFootprint { memory_bytes, storage_bytes })
                    .collect(),
            }
        }),
        (any::<u32>(), any::<u64>()).prop_map(|(num_trials, seed)| Message::RunTrials { num_trials, seed }),
        (any::<u32>(), any::<u64>())
            .prop_map(|(trial_index, latency_ns)| Message::TrialRecord { trial_index, latency_ns }),
        any::<u32>().prop_map(|count| Message::TrialsDone { count }),
        (any::<u16>(), any::<u32>()).prop_map(|(kernel_index, repeats)| Message::BenchOp { kernel_index, repeats }),
        (any::<u16>(), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(|(kernel_index, mean_ns, min_ns, max_ns)| {
            Message::OpResult { kernel_index, mean_ns, min_ns, max_ns }
        }),
        (any::<u16>(), text(60)).prop_map(|(c, text)| Message::Error { code: ErrorCode::from_u16(c), text }),
        Just(Message::Bye),
    ]
}
