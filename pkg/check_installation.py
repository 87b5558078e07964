import importlib
import sys

MODULOS = [
    "numpy",
    "pandas",
    "scipy",
    "skimage",     # scikit-image
    "torch",
    "tqdm",
    "plotly",
    "streamlit",
    "openpyxl",
    "pytest",
]


def check_module(module_name):
    try:
        modulo = importlib.import_module(module_name)
        print(f"✅ {module_name} {getattr(modulo, '__version__', '')}")
        return True
    except ImportError:
        print(f"❌ {module_name} - NÃO INSTALADO")
        return False


def main() -> int:
    print("🔍 VERIFICANDO DEPENDÊNCIAS DO JM3D")
    print("=" * 40)
    faltando = [m for m in MODULOS if not check_module(m)]
    print("=" * 40)
    if faltando:
        print("⚠️  ALGUMAS DEPENDÊNCIAS FALTANDO")
        print("Execute: pip install -r requirements.txt")
        return 1
    print("🎉 TODAS AS DEPENDÊNCIAS ESTÃO INSTALADAS!")
    print("Execute: python cli.py pretrain")
    return 0


if __name__ == "__main__":
    sys.exit(main())
