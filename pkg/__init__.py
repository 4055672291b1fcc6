"""
nonholo-kam
非ホロノミック結合振動子の作用・角変数とKAM安定性の数値実験
"""

__version__ = "0.1.0"
