//! Byte-exact encodings checked against files in `tests/golden/`.
//! Run with `UPDATE_GOLDEN=1` to rewrite them after an intentional change.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pudding::crypto::{sign, GroupElement, Scalar, SIGNATURE_LEN};
use pudding::email::{dkim_verify, reply, verification_body, DomainKeyStore, EmailMessage, MailServer, VERIFICATION_SUBJECT};
use pudding::harness::{run_scenario, write_csv, write_json, OpRow, ScenarioConfig, Workload, CSV_HEADER};
use pudding::sphinx::{ContactInfo, InboxId, NodeId, PACKET_LEN, SURB_LEN};
use pudding::wire::WireMessage;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

fn check_golden(name: &str, actual: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (set UPDATE_GOLDEN=1 to create)", path.display()));
    assert!(expected == actual, "{name} differs from golden file:\n--- expected\n{expected}\n--- actual\n{actual}");
}

fn contact() -> ContactInfo {
    ContactInfo { pk: GroupElement::base_mul(&Scalar::from_u64(7)), provider: NodeId(3), inbox: InboxId([5; 16]) }
}

fn sample_messages() -> Vec<WireMessage> {
    let sig = sign(&Scalar::from_u64(11), b"golden").unwrap().0;
    let elem = GroupElement::base_mul(&Scalar::from_u64(9)).to_bytes();
    let elem2 = GroupElement::base_mul(&Scalar::from_u64(10)).to_bytes();
    let surb = vec![0xab; SURB_LEN];
    let contact = contact().to_bytes();
    vec![
        WireMessage::LookupRequest { target: "alice@a.test".into(), nonce: [1; 16], reply_surb: surb.clone() },
        WireMessage::LookupResponse { node: NodeId(2), nonce: [1; 16], surb: surb.clone(), bpk: elem, sig },
        WireMessage::BlindingNotice { node: NodeId(2), nonce: [1; 16], y: Scalar::from_u64(5).to_bytes(), sig },
        WireMessage::Reflect { first_hop: NodeId(1), packet: vec![0xcd; PACKET_LEN] },
        WireMessage::ContactInit { g_a: elem, nonce: [2; 16], ciphertext: vec![0xee; 20] },
        WireMessage::AddFriendReply {
            g_a: elem,
            g_b: elem2,
            sig,
            mac: [3; 32],
            reply_surb: surb.clone(),
            lookup_nonce: Some([1; 16]),
        },
        WireMessage::AddFriendFinish { g_b: elem2, sig, mac: [4; 32], reply_surb: surb },
        WireMessage::KeyConfirm { g_a: elem, ciphertext: vec![0x11; 8] },
        WireMessage::RegisterRequest { reg_id: [6; 16], username: "bob@b.test".into(), contact, d_auth: NodeId(0) },
        WireMessage::Challenge { reg_id: [6; 16], node: NodeId(1), username: "bob@b.test".into(), challenge: [7; 32] },
        WireMessage::EmailForward { reg_id: [6; 16], raw: "from:x\n".into() },
        WireMessage::Confirmation { node: NodeId(1), username: "bob@b.test".into(), contact, sig },
    ]
}

#[test]
fn wire_encodings_match_golden() {
    let mut text = String::new();
    for msg in sample_messages() {
        let bytes = msg.encode();
        assert_eq!(WireMessage::decode(&bytes).unwrap(), msg);
        text += &format!("{} {}\n", msg.kind(), hex::encode(&bytes));
    }
    check_golden("wire.txt", &text);
}

#[test]
fn lookup_response_layout_built_by_hand() {
    let msg = &sample_messages()[1];
    let WireMessage::LookupResponse { node, nonce, surb, bpk, sig } = msg else { unreachable!() };
    let mut expected = vec![0x02];
    for field in [&node.0.to_be_bytes()[..], &nonce[..], &surb[..], &bpk[..], &sig[..]] {
        expected.extend_from_slice(&(field.len() as u16).to_be_bytes());
        expected.extend_from_slice(field);
    }
    assert_eq!(msg.encode(), expected);
    assert_eq!(expected.len(), 1 + (2 + 4) + (2 + 16) + (2 + SURB_LEN) + (2 + 32) + (2 + SIGNATURE_LEN));
    assert_eq!(expected.len(), 836);
}

#[test]
fn verification_email_matches_golden() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut store = DomainKeyStore::default();
    let d_auth = MailServer::new("pudding.test", &mut store, &mut rng);
    let user = MailServer::new("b.test", &mut store, &mut rng);
    let challenges: BTreeMap<NodeId, [u8; 32]> = (0..2).map(|i| (NodeId(i), [i as u8 + 1; 32])).collect();
    let body = verification_body(&challenges, &contact());
    let outgoing = d_auth
        .dkim_sign(EmailMessage::new("verify@pudding.test", "bob@b.test", VERIFICATION_SUBJECT, &body))
        .unwrap();
    let answer = user.dkim_sign(reply(&outgoing, "yes")).unwrap();
    assert!(dkim_verify(&store, &outgoing) && dkim_verify(&store, &answer));
    let text = format!("{}{}", outgoing.serialize(), answer.serialize());
    assert_eq!(EmailMessage::parse(&answer.serialize()).unwrap(), answer);
    check_golden("email.txt", &text);
}

#[test]
fn csv_rows_match_golden() {
    let rows = vec![
        OpRow {
            scenario: "register_n4".into(),
            repetition: 0,
            operation: "register",
            start_s: 1.5,
            end_s: Some(3.25),
            latency_s: Some(1.75),
            outcome: "success",
        },
        OpRow {
            scenario: "discover_named_n7".into(),
            repetition: 2,
            operation: "lookup",
            start_s: 10.0,
            end_s: None,
            latency_s: None,
            outcome: "timeout",
        },
    ];
    let mut out = Vec::new();
    write_csv(rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    check_golden("rows.csv", &text);
}

/// Replaces every leaf with its JSON type name, and every array with its first element.
fn shape(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
        Value::Array(a) => Value::Array(a.first().map(shape).into_iter().collect()),
        Value::Null => "null".into(),
        Value::Bool(_) => "bool".into(),
        Value::Number(_) => "number".into(),
        Value::String(_) => "string".into(),
    }
}

#[test]
fn json_summary_schema_matches_golden() {
    let cfg = ScenarioConfig {
        n: vec![4],
        clients: 4,
        duration_s: 20.0,
        drain_s: 30.0,
        repetitions: 1,
        workloads: vec![Workload::Register],
        ..ScenarioConfig::default()
    };
    let mut out = Vec::new();
    write_json(&run_scenario(&cfg).unwrap(), &mut out).unwrap();
    let v: Value = serde_json::from_slice(&out).unwrap();
    check_golden("summary_schema.json", &(serde_json::to_string_pretty(&shape(&v)).unwrap() + "\n"));
}
