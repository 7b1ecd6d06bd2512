"""Protocol core: state machine totality, codec round-trips, wire interop."""

import math
import xmlrpc.client

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openlab.protocol import (
    INT32_MAX, INT32_MIN, INTERNAL, TYPE_MISMATCH, VALUE_OUT_OF_RANGE, WRONG_STATE,
    ConnectionState as S, Fault, FaultError, ProtocolEvent as E, Value, WireType,
    decode_call, decode_response, encode_call, encode_fault, encode_response,
    round_to_float32, transition,
)

ALL_STATES = list(S)
ALL_EVENTS = list(E)

# Hand-enumerated expected table: None means Fault 100.
EXPECTED = {
    (S.DISCONNECTED, E.CONNECT): S.CONNECTED,
    (S.DISCONNECTED, E.OPEN_VI): None,
    (S.DISCONNECTED, E.RUN_VI): None,
    (S.DISCONNECTED, E.STOP_VI): None,
    (S.DISCONNECTED, E.CLOSE_VI): None,
    (S.DISCONNECTED, E.DISCONNECT): None,
    (S.CONNECTED, E.CONNECT): None,
    (S.CONNECTED, E.OPEN_VI): S.OPENED,
    (S.CONNECTED, E.RUN_VI): None,
    (S.CONNECTED, E.STOP_VI): None,
    (S.CONNECTED, E.CLOSE_VI): None,
    (S.CONNECTED, E.DISCONNECT): S.DISCONNECTED,
    (S.OPENED, E.CONNECT): None,
    (S.OPENED, E.OPEN_VI): None,
    (S.OPENED, E.RUN_VI): S.RUNNING,
    (S.OPENED, E.STOP_VI): None,
    (S.OPENED, E.CLOSE_VI): S.CONNECTED,
    (S.OPENED, E.DISCONNECT): S.DISCONNECTED,
    (S.RUNNING, E.CONNECT): None,
    (S.RUNNING, E.OPEN_VI): None,
    (S.RUNNING, E.RUN_VI): None,
    (S.RUNNING, E.STOP_VI): S.OPENED,
    (S.RUNNING, E.CLOSE_VI): None,
    (S.RUNNING, E.DISCONNECT): S.DISCONNECTED,
}


class TestTransition:
    def test_table_is_total_and_exact(self):
        assert len(EXPECTED) == 24
        for (state, event), want in EXPECTED.items():
            got = transition(state, event)
            if want is None:
                assert isinstance(got, Fault), (state, event)
                assert got.code == WRONG_STATE
            else:
                assert got is want, (state, event)

    def test_connect_from_disconnected(self):
        assert transition(S.DISCONNECTED, E.CONNECT) is S.CONNECTED

    def test_stop_pauses_running(self):
        assert transition(S.RUNNING, E.STOP_VI) is S.OPENED

    def test_run_before_open_faults(self):
        fault = transition(S.CONNECTED, E.RUN_VI)
        assert isinstance(fault, Fault) and fault.code == WRONG_STATE


# -- value strategies ---------------------------------------------------------

_XML_BAD = "".join(chr(c) for c in range(0x20) if chr(c) not in "\t\n") + "\r￾￿"
_xml_text = st.text(st.characters(blacklist_categories=("Cs",),
                                  blacklist_characters=_XML_BAD))

values = st.one_of(
    st.booleans().map(Value.boolean),
    st.integers(INT32_MIN, INT32_MAX).map(Value.int32),
    st.floats(allow_nan=False, allow_infinity=False, width=32).map(Value.float32),
    st.floats(allow_nan=False, allow_infinity=False).map(Value.float64),
    _xml_text.map(Value.string),
)


def assert_same_value(a: Value, b: Value):
    assert a.kind is b.kind
    if a.kind in (WireType.FLOAT32, WireType.FLOAT64):
        # repr-compare to distinguish -0.0 from 0.0
        assert repr(a.raw) == repr(b.raw)
    else:
        assert a.raw == b.raw


class TestCodec:
    @settings(max_examples=300)
    @given(values)
    def test_response_round_trip(self, value):
        decoded = decode_response(encode_response(value), expected=value.kind)
        assert isinstance(decoded, Value)
        assert_same_value(decoded, value)

    @pytest.mark.parametrize("value", [
        Value.float64(1.7976931348623157e308),
        Value.float64(5e-324),
        Value.float64(-0.0),
        Value.float32(3.4028234663852886e38),
        Value.string(""),
        Value.string("δ-sampler ±0.5 ẟ"),
    ])
    def test_round_trip_corner_cases(self, value):
        decoded = decode_response(encode_response(value), expected=value.kind)
        assert_same_value(decoded, value)

    @settings(max_examples=200)
    @given(st.lists(values, max_size=2))
    def test_call_round_trip_via_set_value(self, params):
        # setValue is the only method admitting an arbitrary scalar
        if len(params) != 2 or params[0].kind is not WireType.STRING:
            params = [Value.string("name"), params[0] if params else Value.boolean(True)]
        doc = encode_call("jil.setValue", params)
        method, decoded = decode_call(doc)
        assert method == "jil.setValue"
        # float32 arrives widened; narrow it back before comparing
        got = decoded[1]
        if params[1].kind is WireType.FLOAT32:
            got = Value.float32(got.raw)
        assert_same_value(decoded[0], params[0])
        assert_same_value(got, params[1])

    def test_empty_parameter_call(self):
        doc = encode_call("jil.runVI", [])
        params, name = xmlrpc.client.loads(doc)
        assert name == "jil.runVI"
        assert params == ()

    def test_set_value_document_shape(self):
        doc = encode_call("jil.setValue", [Value.string("pump_u"), Value.float64(0.5)])
        params, name = xmlrpc.client.loads(doc)
        assert name == "jil.setValue"
        assert params == ("pump_u", 0.5)
        assert isinstance(params[1], float)

    def test_get_value_document_shape(self):
        doc = encode_call("jil.getValue", [Value.string("h1")])
        params, name = xmlrpc.client.loads(doc)
        assert name == "jil.getValue"
        assert params == ("h1",)

    @settings(max_examples=200)
    @given(values)
    def test_stdlib_parses_every_encoded_call(self, value):
        doc = encode_call("jil.setValue", [Value.string("x"), value])
        params, name = xmlrpc.client.loads(doc)
        assert name == "jil.setValue" and len(params) == 2

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            encode_call("jil.shutdown", [])

    def test_wrong_arity_rejected(self):
        with pytest.raises(ValueError):
            encode_call("jil.runVI", [Value.boolean(True)])
        with pytest.raises(ValueError):
            encode_call("jil.connect", [Value.int32(7)])

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_floats_rejected_locally(self, bad):
        with pytest.raises(FaultError) as err:
            encode_call("jil.setValue", [Value.string("pump_u"), Value.float64(bad)])
        assert err.value.code == VALUE_OUT_OF_RANGE

    def test_unencodable_string_rejected(self):
        with pytest.raises(FaultError) as err:
            encode_response(Value.string("\x01"))
        assert err.value.code == VALUE_OUT_OF_RANGE

    def test_float32_is_widened_to_double(self):
        doc = encode_call("jil.setValue", [Value.string("x"), Value.float32(0.1)])
        params, _ = xmlrpc.client.loads(doc)
        assert params[1] == round_to_float32(0.1)


class TestDecodeResponse:
    def test_fault_decodes_to_fault(self):
        doc = encode_fault(Fault(102, "UnknownVariable"))
        fault = decode_response(doc)
        assert fault == Fault(102, "UnknownVariable")

    def test_boolean_response(self):
        decoded = decode_response(encode_response(Value.boolean(True)))
        assert decoded == Value.boolean(True)

    def test_malformed_yields_internal_fault(self):
        fault = decode_response(b"this is not xml")
        assert isinstance(fault, Fault) and fault.code == INTERNAL

    def test_wrong_root_yields_internal_fault(self):
        fault = decode_response(b"<?xml version='1.0'?><methodCall/>")
        assert isinstance(fault, Fault) and fault.code == INTERNAL

    def test_expected_type_contradiction(self):
        doc = encode_response(Value.boolean(True))
        fault = decode_response(doc, expected=WireType.FLOAT64)
        assert isinstance(fault, Fault) and fault.code == TYPE_MISMATCH

    def test_double_narrows_to_float32_on_request(self):
        doc = encode_response(Value.float32(1.5))
        decoded = decode_response(doc, expected=WireType.FLOAT32)
        assert decoded == Value.float32(1.5)

    def test_stdlib_decodes_our_fault(self):
        doc = encode_fault(Fault(103, "TypeMismatch"))
        with pytest.raises(xmlrpc.client.Fault) as err:
            xmlrpc.client.loads(doc)
        assert err.value.faultCode == 103
        assert err.value.faultString == "TypeMismatch"


class TestValue:
    def test_int32_range_enforced(self):
        with pytest.raises(ValueError):
            Value.int32(INT32_MAX + 1)
        with pytest.raises(ValueError):
            Value.int32(INT32_MIN - 1)

    def test_float32_rounds_on_construction(self):
        assert Value.float32(0.1).raw == round_to_float32(0.1)
        assert Value.float32(0.1).raw != 0.1

    def test_no_implicit_variant_conversion(self):
        assert Value.boolean(True) != Value.int32(1)
        assert Value.float64(1.0) != Value.int32(1)

    def test_finiteness_probe(self):
        assert Value.float64(1.0).is_finite()
        assert not Value(WireType.FLOAT64, math.nan).is_finite()
        assert Value.string("x").is_finite()
