"""Wire-level building blocks shared by the instrument server and its clients.

Defines the five scalar wire values, variable metadata, the connection
state machine, the stable fault-code table, and the XML-RPC encoding of
method calls and responses.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union
from xml.etree import ElementTree as ET

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# Fault codes are stable across versions; clients may match on them.
WRONG_STATE = 100
UNKNOWN_VI = 101
UNKNOWN_VARIABLE = 102
TYPE_MISMATCH = 103
NOT_WRITABLE = 104
SESSION_BUSY = 105
VALUE_OUT_OF_RANGE = 106
INTERNAL = 199

FAULT_NAMES = {
    WRONG_STATE: "WrongState",
    UNKNOWN_VI: "UnknownVI",
    UNKNOWN_VARIABLE: "UnknownVariable",
    TYPE_MISMATCH: "TypeMismatch",
    NOT_WRITABLE: "NotWritable",
    SESSION_BUSY: "SessionBusy",
    VALUE_OUT_OF_RANGE: "ValueOutOfRange",
    INTERNAL: "Internal",
}


class WireType(Enum):
    """The scalar types a control or indicator can carry."""

    BOOLEAN = "boolean"
    INT32 = "int32"
    FLOAT32 = "float32"
    FLOAT64 = "float64"
    STRING = "string"


class Direction(Enum):
    CONTROL = "control"      # writable by clients, read by the instrument
    INDICATOR = "indicator"  # written by the instrument, read-only for clients


class SyncClass(Enum):
    SYNCHRONOUS = "sync"
    ASYNCHRONOUS = "async"


def round_to_float32(x: float) -> float:
    """Nearest single-precision value of x, returned as a Python float."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


@dataclass(frozen=True, slots=True)
class Value:
    """A typed scalar payload. Carries exactly one variant; no implicit casts."""

    kind: WireType
    raw: Union[bool, int, float, str]

    @staticmethod
    def boolean(v: bool) -> "Value":
        return Value(WireType.BOOLEAN, bool(v))

    @staticmethod
    def int32(v: int) -> "Value":
        v = int(v)
        if not INT32_MIN <= v <= INT32_MAX:
            raise ValueError(f"int32 out of range: {v}")
        return Value(WireType.INT32, v)

    @staticmethod
    def float32(v: float) -> "Value":
        return Value(WireType.FLOAT32, round_to_float32(float(v)))

    @staticmethod
    def float64(v: float) -> "Value":
        return Value(WireType.FLOAT64, float(v))

    @staticmethod
    def string(v: str) -> "Value":
        return Value(WireType.STRING, str(v))

    def is_finite(self) -> bool:
        if self.kind in (WireType.FLOAT32, WireType.FLOAT64):
            return math.isfinite(self.raw)
        return True


@dataclass(frozen=True, slots=True)
class VariableDescriptor:
    """Published metadata for one control or indicator."""

    name: str
    direction: Direction
    wire_type: WireType
    sync_class: SyncClass

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be non-empty")


@dataclass(frozen=True, slots=True)
class Fault:
    """A protocol error with a stable numeric code."""

    code: int
    message: str

    @staticmethod
    def of(code: int, detail: Optional[str] = None) -> "Fault":
        name = FAULT_NAMES.get(code, "Fault")
        return Fault(code, f"{name}: {detail}" if detail else name)


class FaultError(Exception):
    """Raised where an API surfaces a Fault as an exception."""

    def __init__(self, fault: Fault):
        super().__init__(f"[{fault.code}] {fault.message}")
        self.fault = fault

    @property
    def code(self) -> int:
        return self.fault.code


class ConnectionState(Enum):
    DISCONNECTED = "disconnected"
    CONNECTED = "connected"
    OPENED = "opened"
    RUNNING = "running"


class ProtocolEvent(Enum):
    CONNECT = "connect"
    OPEN_VI = "openVI"
    RUN_VI = "runVI"
    STOP_VI = "stopVI"
    CLOSE_VI = "closeVI"
    DISCONNECT = "disconnect"


_S = ConnectionState
_E = ProtocolEvent

# Total over 4 states x 6 events; pairs absent here fault with WRONG_STATE.
_TRANSITIONS = {
    (_S.DISCONNECTED, _E.CONNECT): _S.CONNECTED,
    (_S.CONNECTED, _E.OPEN_VI): _S.OPENED,
    (_S.OPENED, _E.RUN_VI): _S.RUNNING,
    (_S.RUNNING, _E.STOP_VI): _S.OPENED,
    (_S.OPENED, _E.CLOSE_VI): _S.CONNECTED,
    (_S.CONNECTED, _E.DISCONNECT): _S.DISCONNECTED,
    (_S.OPENED, _E.DISCONNECT): _S.DISCONNECTED,
    (_S.RUNNING, _E.DISCONNECT): _S.DISCONNECTED,
}


def transition(state: ConnectionState, event: ProtocolEvent) -> Union[ConnectionState, Fault]:
    """Next connection state for (state, event), or Fault 100 for illegal pairs.

    Pure function; never touches external state. Disconnect is legal from any
    non-disconnected state (the server stops/closes implicitly).
    """
    nxt = _TRANSITIONS.get((state, event))
    if nxt is None:
        return Fault.of(WRONG_STATE, f"{event.value} not allowed in state {state.value}")
    return nxt


# ---------------------------------------------------------------------------
# XML-RPC codec
#
# The wire has four scalar elements (boolean, i4, double, string); float32 is
# widened exactly to <double> and narrowed back by the reader using the
# declared or expected wire type. Carriage returns in strings are normalized
# to newlines by conforming XML parsers and therefore do not round-trip.
# ---------------------------------------------------------------------------

# (method name, parameter kinds); None admits any scalar value.
METHOD_TABLE = {
    "jil.connect": (WireType.STRING,),
    "jil.openVI": (WireType.STRING,),
    "jil.runVI": (),
    "jil.stopVI": (),
    "jil.closeVI": (),
    "jil.getMetadata": (),
    "jil.setValue": (WireType.STRING, None),
    "jil.getValue": (WireType.STRING,),
    "jil.heartbeat": (),
    "jil.disconnect": (),
}

# Characters that cannot appear in an XML 1.0 document at all.
_XML_UNENCODABLE = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff￾￿]")


def _value_element(value: Value) -> ET.Element:
    el = ET.Element("value")
    if value.kind is WireType.BOOLEAN:
        ET.SubElement(el, "boolean").text = "1" if value.raw else "0"
    elif value.kind is WireType.INT32:
        ET.SubElement(el, "i4").text = str(value.raw)
    elif value.kind in (WireType.FLOAT32, WireType.FLOAT64):
        if not math.isfinite(value.raw):
            raise FaultError(Fault.of(VALUE_OUT_OF_RANGE, "non-finite float cannot be encoded"))
        ET.SubElement(el, "double").text = repr(float(value.raw))
    else:
        if _XML_UNENCODABLE.search(value.raw):
            raise FaultError(Fault.of(VALUE_OUT_OF_RANGE, "string contains characters invalid in XML"))
        ET.SubElement(el, "string").text = value.raw
    return el


def _parse_value(el: ET.Element) -> Value:
    children = list(el)
    if not children:
        # untyped <value> defaults to string
        return Value.string(el.text or "")
    child = children[0]
    tag, text = child.tag, child.text or ""
    if tag == "boolean":
        if text.strip() in ("1", "true"):
            return Value.boolean(True)
        if text.strip() in ("0", "false"):
            return Value.boolean(False)
        raise ValueError(f"bad boolean payload {text!r}")
    if tag in ("i4", "int"):
        return Value.int32(int(text.strip()))
    if tag == "double":
        return Value.float64(float(text.strip()))
    if tag == "string":
        return Value.string(text)
    raise ValueError(f"unsupported value element <{tag}>")


def _document(root: ET.Element) -> bytes:
    return ET.tostring(root, encoding="UTF-8", xml_declaration=True)


def encode_call(method: str, params: Sequence[Value]) -> bytes:
    """Encode a methodCall document for one of the jil.* methods.

    Raises ValueError for methods or parameter shapes outside the method
    table, FaultError(106) for payloads that cannot go on the wire.
    """
    sig = METHOD_TABLE.get(method)
    if sig is None:
        raise ValueError(f"unknown method {method!r}")
    if len(params) != len(sig):
        raise ValueError(f"{method} takes {len(sig)} parameter(s), got {len(params)}")
    for value, want in zip(params, sig):
        if want is not None and value.kind is not want:
            raise ValueError(f"{method} parameter must be {want.value}, got {value.kind.value}")
    root = ET.Element("methodCall")
    ET.SubElement(root, "methodName").text = method
    params_el = ET.SubElement(root, "params")
    for value in params:
        ET.SubElement(params_el, "param").append(_value_element(value))
    return _document(root)


def decode_call(doc: bytes) -> tuple[str, list[Value]]:
    """Decode a methodCall document into (method, params).

    Raises FaultError(199) when the document is not a well-formed call.
    """
    try:
        root = ET.fromstring(doc)
        if root.tag != "methodCall":
            raise ValueError(f"expected methodCall, got <{root.tag}>")
        name_el = root.find("methodName")
        if name_el is None or not name_el.text:
            raise ValueError("missing methodName")
        params = []
        for param in root.findall("./params/param"):
            value_el = param.find("value")
            if value_el is None:
                raise ValueError("param without value")
            params.append(_parse_value(value_el))
        return name_el.text.strip(), params
    except FaultError:
        raise
    except Exception as exc:
        raise FaultError(Fault.of(INTERNAL, f"malformed call: {exc}")) from exc


def encode_response(value: Value) -> bytes:
    root = ET.Element("methodResponse")
    params_el = ET.SubElement(root, "params")
    ET.SubElement(params_el, "param").append(_value_element(value))
    return _document(root)


def encode_fault(fault: Fault) -> bytes:
    root = ET.Element("methodResponse")
    fault_el = ET.SubElement(root, "fault")
    value_el = ET.SubElement(fault_el, "value")
    struct_el = ET.SubElement(value_el, "struct")
    for name, member_value in (("faultCode", Value.int32(fault.code)),
                               ("faultString", Value.string(fault.message))):
        member = ET.SubElement(struct_el, "member")
        ET.SubElement(member, "name").text = name
        member.append(_value_element(member_value))
    return _document(root)


def decode_response(doc: bytes, expected: Optional[WireType] = None) -> Union[Value, Fault]:
    """Decode a methodResponse into its return Value or carried Fault.

    Malformed documents decode to Fault 199. When `expected` is given, a
    response whose type contradicts it decodes to Fault 103; a <double> is
    narrowed to float32 on request (the wire does not distinguish the two).
    """
    try:
        root = ET.fromstring(doc)
        if root.tag != "methodResponse":
            raise ValueError(f"expected methodResponse, got <{root.tag}>")
        fault_el = root.find("fault")
        if fault_el is not None:
            code, message = None, ""
            for member in fault_el.findall("./value/struct/member"):
                name = (member.findtext("name") or "").strip()
                value = _parse_value(member.find("value"))
                if name == "faultCode":
                    code = int(value.raw)
                elif name == "faultString":
                    message = str(value.raw)
            if code is None:
                raise ValueError("fault without faultCode")
            return Fault(code, message)
        value_el = root.find("./params/param/value")
        if value_el is None:
            raise ValueError("response carries no value")
        value = _parse_value(value_el)
    except Exception as exc:
        return Fault.of(INTERNAL, f"malformed response: {exc}")
    if expected is None or value.kind is expected:
        return value
    if expected is WireType.FLOAT32 and value.kind is WireType.FLOAT64:
        return Value.float32(value.raw)
    if expected is WireType.FLOAT64 and value.kind is WireType.FLOAT32:
        return Value.float64(value.raw)
    return Fault.of(TYPE_MISMATCH, f"expected {expected.value}, got {value.kind.value}")


TRUE = Value.boolean(True)
