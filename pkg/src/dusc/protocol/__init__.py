from .authorize import AccessDecision, DatRejection, GrantedAccess, Reason, authorize, check_dat
from .matching import Match, match_request
from .messages import (
    M1,
    M2,
    M3,
    M4,
    M5,
    AccessItem,
    AuditRecord,
    GrantBundle,
    MessageType,
    decode_message,
    make_m1,
    make_m2,
    make_m3,
    make_m4,
    make_m5,
    message_type,
    verify_m1,
    verify_m2,
    verify_m3,
    verify_m5,
)
from .query import MATCH_ALL, QuerySyntaxError, Term, evaluate, parse_conditions, parse_terms
from .tickets import (
    DAT,
    DOT,
    RT,
    DapKind,
    DataAccessPath,
    DataAccessTicket,
    DataObjectTicket,
    DuplicateDataId,
    Endorsement,
    Grant,
    OwnerKeys,
    ProtocolError,
    Rejected,
    RequestTicket,
    VerifiedRequest,
    endorse,
    make_dot,
    make_rt,
    sign_grant,
    verify_chain,
    verify_dot,
    verify_rt,
)
