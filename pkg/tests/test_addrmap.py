import random

import pytest

from pimbus.addrmap import (
    DramCoord,
    GeometryConfig,
    HetMapConfig,
    MappingFunction,
    MappingKind,
    Region,
    channel_balance,
    default_xor_masks,
)

# 8 KiB toy geometry: 13 address bits, small enough for exhaustive sweeps.
TOY = GeometryConfig(
    channels=2, ranks_per_channel=2, bankgroups_per_rank=2,
    banks_per_bankgroup=2, rows_per_bank=4, columns_per_row=2, line_bytes=64)


def test_geometry_validation():
    with pytest.raises(ValueError, match="channels"):
        GeometryConfig(channels=3)
    with pytest.raises(ValueError, match="line_bytes"):
        GeometryConfig(line_bytes=4)
    with pytest.raises(ValueError, match="rows_per_bank"):
        GeometryConfig(rows_per_bank=0)


def test_geometry_derived_sizes():
    assert TOY.capacity_bytes == 2 * 2 * 2 * 2 * 4 * 2 * 64
    assert TOY.row_span_bytes == 128
    assert TOY.bank_span_bytes == 512
    assert TOY.total_banks == 16


def test_locality_decode_zero():
    fn = MappingFunction.locality_centric(TOY)
    assert fn.decode(0) == DramCoord(0, 0, 0, 0, 0, 0, 0)


def test_locality_decode_msb_is_channel():
    # 13-bit space; only the MSB set selects channel 1, everything else 0.
    fn = MappingFunction.locality_centric(TOY)
    assert fn.decode(0x1000) == DramCoord(1, 0, 0, 0, 0, 0, 0)


def test_locality_field_order_msb_to_lsb():
    # Walking up the address sweeps byte offset, then column, row, bank,
    # bankgroup, rank, channel, in that order.
    fn = MappingFunction.locality_centric(TOY)
    assert fn.decode(64).column == 1
    assert fn.decode(128).row == 1
    assert fn.decode(512).bank == 1
    assert fn.decode(1024).bankgroup == 1
    assert fn.decode(2048).rank == 1
    assert fn.decode(4096).channel == 1


def test_mlp_xor_parity_example():
    # Channel bit sits at bit 6 (64 B lines, 2 channels); mask taps bits 9
    # and 12.  addr 0x40: raw channel 1, parity 0 -> channel 1.
    # addr 0x240: bit 9 also set, parity 1 -> channel 0.
    geom = GeometryConfig(
        channels=2, ranks_per_channel=2, bankgroups_per_rank=2,
        banks_per_bankgroup=2, rows_per_bank=16, columns_per_row=2, line_bytes=64)
    fn = MappingFunction.mlp_centric(geom, xor_masks=[(1 << 9) | (1 << 12)])
    assert fn.decode(0x0040).channel == 1
    assert fn.decode(0x0240).channel == 0


def test_xor_mask_validation():
    geom = TOY
    with pytest.raises(ValueError, match="channel field"):
        # Bit 6 is the channel bit itself in the mlp layout.
        MappingFunction.mlp_centric(geom, xor_masks=[1 << 6])
    with pytest.raises(ValueError, match="empty"):
        MappingFunction.mlp_centric(geom, xor_masks=[0])
    with pytest.raises(ValueError, match="beyond"):
        MappingFunction.mlp_centric(geom, xor_masks=[1 << 40])
    with pytest.raises(ValueError, match="mlp_centric"):
        MappingFunction(MappingKind.LOCALITY_CENTRIC, geom, (1 << 9,))


def _all_functions(geom):
    fns = [MappingFunction.locality_centric(geom),
           MappingFunction.mlp_centric(geom, xor_masks=())]
    if default_xor_masks(geom):
        fns.append(MappingFunction.mlp_centric(geom))
    return fns


@pytest.mark.parametrize("geom", [
    TOY,
    GeometryConfig(channels=1, ranks_per_channel=1, bankgroups_per_rank=1,
                   banks_per_bankgroup=1, rows_per_bank=2, columns_per_row=2,
                   line_bytes=8),
    GeometryConfig(channels=4, ranks_per_channel=2, bankgroups_per_rank=4,
                   banks_per_bankgroup=4, rows_per_bank=8, columns_per_row=4,
                   line_bytes=64),
])
def test_roundtrip_exhaustive(geom):
    for fn in _all_functions(geom):
        seen = set()
        for addr in range(0, geom.capacity_bytes, geom.line_bytes):
            coord = fn.decode(addr)
            assert fn.encode(coord) == addr
            seen.add(coord)
        assert len(seen) == geom.total_lines


def test_encode_highest_coord_is_highest_line():
    for fn in _all_functions(TOY):
        g = fn.geometry
        top = DramCoord(g.channels - 1, g.ranks_per_channel - 1,
                        g.bankgroups_per_rank - 1, g.banks_per_bankgroup - 1,
                        g.rows_per_bank - 1, g.columns_per_row - 1, 0)
        if fn.kind is MappingKind.LOCALITY_CENTRIC:
            assert fn.encode(top) == g.capacity_bytes - g.line_bytes
        else:
            # Hashed layouts permute, but the image must stay in range and
            # invert correctly.
            addr = fn.encode(top)
            assert 0 <= addr < g.capacity_bytes
            assert fn.decode(addr) == top


def test_decode_out_of_range_names_capacity():
    fn = MappingFunction.locality_centric(TOY)
    with pytest.raises(ValueError, match=str(TOY.capacity_bytes)):
        fn.decode(TOY.capacity_bytes)
    with pytest.raises(ValueError):
        fn.decode(-1)


def test_encode_out_of_bounds_names_field():
    fn = MappingFunction.locality_centric(TOY)
    bad = DramCoord(0, 0, 0, 0, TOY.rows_per_bank, 0, 0)
    with pytest.raises(ValueError, match="row"):
        fn.encode(bad)


def test_mlp_aligned_windows_cover_all_channels():
    # In every aligned group of `channels` consecutive lines the decoded
    # channels are all distinct (the upper address bits, and therefore the
    # XOR parity, are constant inside such a group).
    geom = GeometryConfig(channels=4, ranks_per_channel=2, bankgroups_per_rank=4,
                          banks_per_bankgroup=4, rows_per_bank=16,
                          columns_per_row=8, line_bytes=64)
    fn = MappingFunction.mlp_centric(geom)
    nch = geom.channels
    lines = geom.total_lines
    rng = random.Random(7)
    starts = {0, lines - nch}
    starts.update(rng.randrange(lines // nch) * nch for _ in range(512))
    for start in starts:
        chans = {fn.decode((start + i) * 64).channel for i in range(nch)}
        assert len(chans) == nch


def test_channel_balance_mlp_sequential():
    geom = GeometryConfig(channels=4, ranks_per_channel=2, bankgroups_per_rank=4,
                          banks_per_bankgroup=4, rows_per_bank=32,
                          columns_per_row=16, line_bytes=64)
    fn = MappingFunction.mlp_centric(geom)
    addrs = range(0, 1 << 20, 64)
    counts = channel_balance(addrs, fn)
    assert sum(counts) == len(addrs)
    assert max(counts) / min(counts) <= 1.01


def test_channel_balance_locality_sequential():
    fn = MappingFunction.locality_centric(TOY)
    span = TOY.capacity_bytes // TOY.channels
    counts = channel_balance(range(0, span, 64), fn)
    assert counts == [span // 64, 0]
    counts = channel_balance(range(0, 2 * span, 64), fn)
    assert counts == [span // 64, span // 64]


def test_channel_balance_empty():
    fn = MappingFunction.locality_centric(TOY)
    assert channel_balance([], fn) == [0, 0]


def _toy_hetmap():
    dram_fn = MappingFunction.mlp_centric(TOY)
    pim_fn = MappingFunction.locality_centric(TOY)
    return HetMapConfig(dram_fn, pim_fn, TOY.capacity_bytes)


def test_route_boundaries():
    het = _toy_hetmap()
    region, coord = het.route(0)
    assert region is Region.DRAM and coord == DramCoord(0, 0, 0, 0, 0, 0, 0)
    region, coord = het.route(het.dram_bytes)
    assert region is Region.PIM and coord == DramCoord(0, 0, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError, match="range"):
        het.route(het.total_bytes)


def test_route_partitions_space_exactly():
    # Every line routes to exactly one region; each side is a bijection onto
    # the full coordinate set of its geometry.
    het = _toy_hetmap()
    dram_coords = set()
    pim_coords = set()
    for addr in range(0, het.total_bytes, 64):
        region, coord = het.route(addr)
        (dram_coords if region is Region.DRAM else pim_coords).add(coord)
    assert len(dram_coords) == TOY.total_lines
    assert len(pim_coords) == TOY.total_lines


def test_hetmap_validates_partition_boundary():
    dram_fn = MappingFunction.mlp_centric(TOY)
    pim_fn = MappingFunction.locality_centric(TOY)
    with pytest.raises(ValueError, match="dram_bytes"):
        HetMapConfig(dram_fn, pim_fn, TOY.capacity_bytes - 64)


def test_pim_region_bank_locality():
    # Every bank-span-aligned region in the PIM space decodes to exactly one
    # (channel, rank, bankgroup, bank).
    het = _toy_hetmap()
    g = TOY
    span = g.bank_span_bytes
    for base in range(0, g.capacity_bytes, span):
        banks = set()
        for off in range(0, span, g.line_bytes):
            region, c = het.route(het.dram_bytes + base + off)
            assert region is Region.PIM
            banks.add((c.channel, c.rank, c.bankgroup, c.bank))
        assert len(banks) == 1


def test_row_span_region_single_bank():
    het = _toy_hetmap()
    g = TOY
    rng = random.Random(3)
    for _ in range(64):
        base = rng.randrange(g.capacity_bytes // g.row_span_bytes) * g.row_span_bytes
        banks = {
            het.route(het.dram_bytes + base + off)[1][:4]
            for off in range(0, g.row_span_bytes, g.line_bytes)
        }
        assert len(banks) == 1
