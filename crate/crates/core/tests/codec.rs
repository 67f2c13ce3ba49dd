use proptest::prelude::*;
use rtmfp_sim::wire::{AckChunk, Chunk, DataChunk, DecodeError, Fragment, IHello, Packet, PacketMode};

fn hello() -> Packet {
    Packet {
        session_id: 0,
        mode: PacketMode::Handshake,
        time_critical: false,
        timestamp: 100,
        chunks: vec![Chunk::IHello(IHello {
            target_epd: 20,
            tag: 0x1122_3344,
        })],
    }
}

fn data() -> Packet {
    Packet {
        session_id: 1,
        mode: PacketMode::Established,
        time_critical: true,
        timestamp: 0,
        chunks: vec![Chunk::Data(DataChunk {
            flow_id: 1,
            seq: 42,
            frag: Fragment::Whole,
            time_critical: true,
            payload: b"abc".to_vec(),
        })],
    }
}

fn ack() -> Packet {
    Packet {
        session_id: 0xdead_beef,
        mode: PacketMode::Established,
        time_critical: false,
        timestamp: 10,
        chunks: vec![Chunk::Ack(AckChunk {
            flow_id: 7,
            cum_ack: 5,
            gaps: vec![(7, 8), (10, 12)],
            adv_buffer: 65536,
        })],
    }
}

const HELLO_HEX: &str = "00000000000000000000006430000400000011223344 00000014";
const DATA_HEX: &str = "0000000103000000000000001000030400010000002a616263";
const ACK_HEX: &str = "deadbeef010000000000000a51001400000700000005000100000000000700000008 0000000a0000000c";

fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s.replace(' ', "")).unwrap()
}

#[test]
fn golden_vectors() {
    for (p, h) in [(hello(), HELLO_HEX), (data(), DATA_HEX), (ack(), ACK_HEX)] {
        let bytes = p.encode(1472).unwrap();
        assert_eq!(hex::encode(&bytes), hex::encode(unhex(h)));
        assert_eq!(Packet::decode(&bytes).unwrap(), p);
    }
}

#[test]
fn unknown_chunk_is_skipped() {
    let mut bytes = data().encode(1472).unwrap();
    bytes.extend_from_slice(&unhex("99 0002 00 0000 00000000 beef"));
    assert_eq!(Packet::decode(&bytes).unwrap(), data());
}

#[test]
fn only_unknown_chunks_is_an_error() {
    let bytes = unhex("00000001 01000000 00000000 99 0000 00 0000 00000000");
    assert_eq!(Packet::decode(&bytes), Err(DecodeError::NoChunks));
}

#[test]
fn overlapping_gaps_rejected_on_decode() {
    let mut bytes = ack().encode(1472).unwrap();
    // second range now starts inside the first
    let at = bytes.len() - 8;
    bytes[at..at + 4].copy_from_slice(&8u32.to_be_bytes());
    assert_eq!(Packet::decode(&bytes), Err(DecodeError::InvalidGaps));
}

proptest! {
    #[test]
    fn truncation_never_panics(cut in 0usize..40) {
        let bytes = ack().encode(1472).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Packet::decode(&bytes[..cut]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = Packet::decode(&bytes);
    }
}
