"""Shared builders for the test suite."""

from dusc import crypto


def key(label: str) -> crypto.KeyPair:
    return crypto.generate_identity(crypto.seed_from_label("tests", label))


def dap(i=0):
    from dusc.protocol import DataAccessPath

    return DataAccessPath.parse(f"url:https://src.example/obj/{i}")


def dots_for(source, owner_public, n, meta=None, prefix="obj"):
    from dusc.protocol import make_dot

    return [
        make_dot(source, owner_public, f"{prefix}-{i}", meta(i) if meta else {"type": "hr", "i": str(i)}, dap(i))
        for i in range(n)
    ]


def verified_request(requester, query="type=hr", duration=100, request_id="req-1"):
    from dusc.protocol import make_m2, make_rt, verify_m2

    rt = make_rt(requester, query, "", duration, request_id=request_id)
    return verify_m2(make_m2(rt, [], requester).encode())


def granted_items(source, owner, requester, n=3, *, issued_at=0, duration=100, request_id="req-1"):
    """Run M3 issuance honestly and return the requester's access items."""
    from dusc.protocol import make_m3, verify_m3

    dots = dots_for(source, owner.primary.public, n)
    vreq = verified_request(requester, duration=duration, request_id=request_id)
    m3 = make_m3(owner, [(d, "type=hr") for d in dots], vreq, issued_at=issued_at)
    return verify_m3(m3.encode(), requester).items


class HonestRun:
    """One deterministic instance of every message plus its verifier."""

    def __init__(self):
        from dusc.protocol import (
            authorize,
            endorse,
            make_m1,
            make_m2,
            make_m3,
            make_m4,
            make_m5,
            make_rt,
            OwnerKeys,
            verify_m2,
            verify_m3,
        )

        with crypto.deterministic():
            self.source = key("hr-source")
            self.requester = key("hr-requester")
            self.owner = OwnerKeys.generate(crypto.seed_from_label("tests", "hr-owner"))
            self.endorser = key("hr-endorser")
            dots = dots_for(self.source, self.owner.primary.public, 2)
            token = crypto.sign(self.source.public, self.owner.primary)
            self.m1 = make_m1(self.source, self.owner.primary.public, token, dots[0]).encode()
            rt = make_rt(self.requester, "type=hr", "age>=18", 100, {"p": "study"}, request_id="hr-1")
            chain = endorse(rt, [], self.endorser, "fine")
            self.m2 = make_m2(rt, chain, self.requester).encode()
            vreq = verify_m2(self.m2, {self.endorser.public})
            self.m3 = make_m3(self.owner, [(d, "type=hr") for d in dots], vreq, issued_at=1).encode()
            items = verify_m3(self.m3, self.requester).items
            self.m4 = make_m4([i.dat for i in items], self.requester, self.source.public).encode()
            decision = authorize(self.m4, self.source, now=2)
            assert decision.ok and len(decision.granted) == 2
            self.m5 = make_m5(self.source, decision.granted[0].dat, access_time=3).encode()

    def messages(self):
        return {"M1": self.m1, "M2": self.m2, "M3": self.m3, "M4": self.m4, "M5": self.m5}

    def accepts(self, name, raw):
        """True when the intended recipient's verify operation accepts ``raw``."""
        from dusc.protocol import Rejected, authorize, verify_m1, verify_m2, verify_m3, verify_m5

        try:
            if name == "M1":
                verify_m1(raw, self.owner.primary)
            elif name == "M2":
                verify_m2(raw, {self.endorser.public})
            elif name == "M3":
                verify_m3(raw, self.requester)
            elif name == "M4":
                return authorize(raw, self.source, now=2).ok
            elif name == "M5":
                verify_m5(raw, self.owner.callback)
        except Rejected:
            return False
        return True


def flips(raw):
    """Single-byte flips: first and last byte of every field span, low and high bit."""
    from dusc import encoding as enc

    seen = set()
    for off, n in enc.field_spans(raw[2:]):
        for pos in {2 + off, 2 + off + n - 1}:
            for mask in (0x01, 0x80):
                if (pos, mask) in seen:
                    continue
                seen.add((pos, mask))
                out = bytearray(raw)
                out[pos] ^= mask
                yield pos, bytes(out)
    # the two header bytes (type tag, version)
    for pos in (0, 1):
        out = bytearray(raw)
        out[pos] ^= 0x01
        yield pos, bytes(out)
