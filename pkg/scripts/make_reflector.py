"""Write the flat rigid reflector used by the dual-trap example.

A 0.16 m square plate in the mid-plane between the preset boards (z = 0.12),
split into 32 x 32 cells of two triangles each, normals facing the top board.
"""
import argparse

from sonoholo.geometry import board_midplane, plate_mesh, write_stl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="reflector.stl")
    ap.add_argument("--size", type=float, default=0.16, help="side length in metres")
    ap.add_argument("--cells", type=int, default=32, help="cells per side")
    ap.add_argument("--z", type=float, default=board_midplane(), help="plate height in metres")
    ap.add_argument("--ascii", action="store_true", help="write ASCII STL instead of binary")
    args = ap.parse_args()
    mesh = plate_mesh(args.size, args.size, args.cells, args.cells, z=args.z)
    write_stl(args.out, mesh, binary=not args.ascii)
    print(f"wrote {len(mesh)} triangles to {args.out}")


if __name__ == "__main__":
    main()
