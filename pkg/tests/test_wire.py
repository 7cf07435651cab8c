"""Wire codec: canonical encoding, tolerant decoding, golden stability."""
from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manetmon.wire import (
    Address,
    AggregateBody,
    DecodeError,
    MonitorFunction,
    MonitoringPacket,
    PacketType,
    QueryBody,
    SessionId,
    decode_packet,
    encode_packet,
    make_session_id,
)

FIXTURES = Path(__file__).parent / "fixtures" / "packets"


# --- strategies ---------------------------------------------------------------

octet = st.integers(0, 255)
addresses = st.builds(lambda a, b, c, d: Address(f"{a}.{b}.{c}.{d}"), octet, octet, octet, octet)
sessions = st.builds(SessionId, addresses, st.integers(0, 2**45))
functions = st.sampled_from(list(MonitorFunction))
outcomes = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def packets(draw):
    ptype = draw(st.sampled_from(list(PacketType)))
    query = aggregate = None
    if ptype is PacketType.QUERY:
        relay = tuple(draw(st.lists(addresses, max_size=3)))
        query = QueryBody(draw(functions), relay)
    else:
        aggregate = AggregateBody(draw(outcomes), draw(st.integers(1, 10_000)))
    return MonitoringPacket(
        type=ptype,
        parent=draw(addresses),
        source=draw(addresses),
        destination=draw(addresses),
        gateway=draw(addresses),
        timeout_ms=draw(st.integers(1, 10**6)),
        timestamp=draw(sessions),
        query=query,
        aggregate=aggregate,
    )


# --- addresses and sessions ----------------------------------------------------

def test_address_parses_dotted_quad():
    assert Address("10.0.0.7").octets == (10, 0, 0, 7)


@pytest.mark.parametrize("bad", ["10.0.0", "1.2.3.4.5", "256.0.0.1", "01.2.3.4", "a.b.c.d", ""])
def test_address_rejects_malformed(bad):
    with pytest.raises(ValueError):
        Address(bad)


def test_address_order_is_octet_tuple_order():
    assert Address("2.0.0.1") < Address("10.0.0.1")  # not string order
    assert sorted([Address("10.0.0.10"), Address("10.0.0.2")])[0] == Address("10.0.0.2")


def test_session_id_serializes_as_concatenation():
    sid = make_session_id(Address("10.0.0.1"), 1500000000000)
    assert sid.token == "10.0.0.11500000000000"


def test_session_id_deterministic_and_time_distinct():
    a = make_session_id(Address("10.0.0.1"), 123)
    b = make_session_id(Address("10.0.0.1"), 123)
    c = make_session_id(Address("10.0.0.1"), 124)
    assert a == b and hash(a) == hash(b)
    assert a != c


@given(sessions)
def test_session_token_parse_is_token_stable(sid):
    assert SessionId.parse(sid.token) == sid


# --- canonical encoding ---------------------------------------------------------

def _query_packet(**overrides) -> MonitoringPacket:
    base = dict(
        type=PacketType.QUERY,
        parent=Address("10.0.0.1"),
        source=Address("10.0.0.2"),
        destination=Address("10.0.0.1"),
        gateway=Address("10.0.0.1"),
        timeout_ms=1000,
        timestamp=make_session_id(Address("10.0.0.1"), 1500000000000),
        query=QueryBody(MonitorFunction.AVG_CPU, (Address("10.0.0.1"),)),
    )
    base.update(overrides)
    return MonitoringPacket(**base)


def test_encode_minimal_query_packet():
    raw = encode_packet(_query_packet())
    obj = json.loads(raw)
    assert obj["type"] == "query"
    assert obj["query"]["relaySet"] == ["10.0.0.1"]
    assert "aggregate" not in obj
    assert list(obj) == ["type", "parent", "source", "destination", "gateway",
                         "timeout", "timestamp", "query"]
    assert b" " not in raw


def test_encode_aggregate_presence_rule():
    pkt = MonitoringPacket(
        type=PacketType.AGGREGATE,
        parent=Address("10.0.0.1"),
        source=Address("10.0.0.2"),
        destination=Address("10.0.0.1"),
        gateway=Address("10.0.0.1"),
        timeout_ms=1000,
        timestamp=make_session_id(Address("10.0.0.1"), 1),
        aggregate=AggregateBody(15.0, 3),
    )
    raw = encode_packet(pkt).decode()
    assert '"aggregate":{"outcome":15.0,"observations":3}' in raw
    assert '"query"' not in raw


def test_equal_packets_encode_identically():
    assert encode_packet(_query_packet()) == encode_packet(_query_packet())


@given(packets())
@settings(max_examples=300)
def test_round_trip_identity(pkt):
    assert decode_packet(encode_packet(pkt)) == pkt


def test_decode_tolerates_key_order_and_whitespace():
    raw = encode_packet(_query_packet())
    obj = json.loads(raw)
    shuffled = {k: obj[k] for k in reversed(list(obj))}
    loose = json.dumps(shuffled, indent=3)
    assert decode_packet(loose.encode()) == _query_packet()


# --- decode errors ---------------------------------------------------------------

def _mutate(raw: bytes, **changes) -> bytes:
    obj = json.loads(raw)
    for key, value in changes.items():
        if value is None:
            obj.pop(key, None)
        else:
            obj[key] = value
    return json.dumps(obj).encode()


def test_decode_rejects_non_json():
    with pytest.raises(DecodeError) as err:
        decode_packet(b"{not json")
    assert err.value.code == "malformed"


def test_decode_rejects_unknown_type():
    with pytest.raises(DecodeError) as err:
        decode_packet(_mutate(encode_packet(_query_packet()), type="gossip"))
    assert err.value.code == "unknown_type"


def test_decode_rejects_missing_field():
    with pytest.raises(DecodeError) as err:
        decode_packet(_mutate(encode_packet(_query_packet()), source=None))
    assert err.value.code == "missing_field"


def test_decode_rejects_body_mismatch():
    raw = _mutate(encode_packet(_query_packet()), query=None)
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.code == "body_mismatch"
    both = _mutate(encode_packet(_query_packet()), aggregate={"outcome": 1.0, "observations": 1})
    with pytest.raises(DecodeError) as err:
        decode_packet(both)
    assert err.value.code == "body_mismatch"


def test_decode_rejects_bad_address():
    with pytest.raises(DecodeError) as err:
        decode_packet(_mutate(encode_packet(_query_packet()), gateway="300.0.0.1"))
    assert err.value.code == "bad_address"


@pytest.mark.parametrize("timeout", [0, -5, 2.5, "1000"])
def test_decode_rejects_bad_timeout(timeout):
    with pytest.raises(DecodeError) as err:
        decode_packet(_mutate(encode_packet(_query_packet()), timeout=timeout))
    assert err.value.code == "bad_timeout"


def test_decode_rejects_unknown_function():
    raw = _mutate(
        encode_packet(_query_packet()),
        query={"function": "MEDIAN", "relaySet": []},
    )
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.code == "unknown_type"


# --- golden fixtures ---------------------------------------------------------------

def fixture_files() -> list[Path]:
    return sorted(FIXTURES.glob("*.json"))


def test_fixture_corpus_covers_all_types():
    types = {json.loads(p.read_bytes())["type"] for p in fixture_files()}
    assert types == {t.value for t in PacketType}
    assert len(fixture_files()) >= 10


@pytest.mark.parametrize("path", fixture_files(), ids=lambda p: p.stem)
def test_fixture_bytes_are_stable(path):
    raw = path.read_bytes()
    assert encode_packet(decode_packet(raw)) == raw
