use ei_model::{DatasetName, EventKey, Guid};
use ei_transport::{
    AckStatus, ConsumptionAck, ControlBody, ControlMessage, DuplicateAlert, FileReport, JobReport,
    TransportError, ValidationNotice, MAX_CONTROL_MESSAGE_BYTES,
};

fn dataset() -> DatasetName {
    DatasetName::parse("data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824").unwrap()
}

fn guid(byte: u8) -> Guid {
    Guid::from_bytes([byte; 16])
}

fn report(n_files: usize) -> JobReport {
    JobReport {
        task_id: 11,
        job_id: 3,
        dataset: dataset(),
        object_uri: "local://ei/ei/data17.spb".into(),
        files: (0..n_files)
            .map(|i| FileReport {
                guid: guid(i as u8),
                nevents: 1_000_000 + i as u64,
                nunique: 999_000 + i as u64,
            })
            .collect(),
        started_ms: 1_500_000_000_000,
        ended_ms: 1_500_000_100_000,
    }
}

#[test]
fn all_bodies_round_trip_through_json() {
    let bodies = vec![
        ControlBody::JobReport(report(3)),
        ControlBody::ValidationNotice(ValidationNotice {
            dataset: dataset(),
            validation_uri: "local://ei/ei/validation.1.json".into(),
        }),
        ControlBody::ConsumptionAck(ConsumptionAck {
            dataset: dataset(),
            consumed_events: 12345,
            target_path: "incoming/data17_13TeV.00330079.physics_BphysLS/x.seq".into(),
            status: AckStatus::Ok,
            error: None,
        }),
        ControlBody::ConsumptionAck(ConsumptionAck {
            dataset: dataset(),
            consumed_events: 0,
            target_path: String::new(),
            status: AckStatus::Error,
            error: Some("validation object missing".into()),
        }),
        ControlBody::DuplicateAlert(DuplicateAlert {
            dataset: dataset(),
            job_id: 3,
            duplicate_keys: vec![EventKey::new(330079, 7), EventKey::new(330079, 9)],
        }),
    ];
    for (i, body) in bodies.into_iter().enumerate() {
        let msg = ControlMessage::new(100 + i as u64, 42, body);
        let bytes = msg.to_bytes().unwrap();
        let back = ControlMessage::from_bytes(&bytes).unwrap();
        assert_eq!(back, msg);
    }
}

#[test]
fn wire_shape_is_tagged_json() {
    let msg = ControlMessage::new(7, 1000, ControlBody::JobReport(report(1)));
    let text = String::from_utf8(msg.to_bytes().unwrap()).unwrap();
    assert!(text.contains("\"msg_type\":\"JOB_REPORT\""), "{text}");
    assert!(text.contains("\"msg_id\":7"), "{text}");
    assert!(text.contains("\"body\":"), "{text}");
    assert!(
        text.contains("\"dataset\":\"data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824\""),
        "{text}"
    );
}

#[test]
fn hundred_file_report_fits_one_frame() {
    let msg = ControlMessage::new(1, 0, ControlBody::JobReport(report(100)));
    let bytes = msg.to_bytes().unwrap();
    assert!(
        bytes.len() <= MAX_CONTROL_MESSAGE_BYTES,
        "{} bytes exceeds the frame limit",
        bytes.len()
    );
}

#[test]
fn oversized_messages_are_refused_at_serialization() {
    let mut ack = ConsumptionAck {
        dataset: dataset(),
        consumed_events: 0,
        target_path: String::new(),
        status: AckStatus::Error,
        error: None,
    };
    ack.error = Some("x".repeat(MAX_CONTROL_MESSAGE_BYTES));
    let msg = ControlMessage::new(1, 0, ControlBody::ConsumptionAck(ack));
    assert!(matches!(
        msg.to_bytes(),
        Err(TransportError::MessageTooLarge { .. })
    ));
}

#[test]
fn malformed_json_is_rejected() {
    assert!(ControlMessage::from_bytes(b"{not json").is_err());
    assert!(ControlMessage::from_bytes(b"{\"msg_id\":1}").is_err());
}
