"""
🧊 EXPLORADOR DE EXECUÇÕES JM3D
Painel somente leitura sobre diretórios de execução: curvas de perda,
relatórios zero-shot, vistas candidatas, recuperação e ponte LLM
Versão 1.0
"""
import os
import sys
from pathlib import Path

import pandas as pd
import streamlit as st

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.config_execucao import VARIAVEL_SAIDA
from src.export_system import carregar_metricas, carregar_relatorios, exportar_execucao
from src.persistencia import read_jsonl, read_point_file, read_triplet_manifest
from src.smo_dados import render_candidate_views
from src.treinamento import ler_config_execucao, ler_manifesto
from src.visualizacao import (plot_curvas_perda, plot_grade_vistas, plot_nuvem,
                              plot_perda_ponte, plot_relatorios)

# ====================== CONFIGURAÇÃO INICIAL ======================
st.set_page_config(
    page_title="Explorador JM3D",
    page_icon="🧊",
    layout="wide",
    initial_sidebar_state="expanded"
)


def diretorios_de_execucao(raiz: Path):
    """Subdiretórios (ou a própria raiz) que contêm config.json"""
    if (raiz / "config.json").exists():
        return [raiz]
    return sorted(p.parent for p in raiz.glob("*/config.json"))


def create_sidebar():
    """Barra lateral: raiz das execuções, execução e página"""
    with st.sidebar:
        st.title("⚙️ Execuções")
        raiz = Path(st.text_input("Raiz", value=os.environ.get(VARIAVEL_SAIDA, "runs")))
        execucoes = diretorios_de_execucao(raiz) if raiz.exists() else []
        if not execucoes:
            st.warning(f"Nenhuma execução em {raiz}")
            return None, None
        diretorio = st.selectbox("Execução", execucoes, format_func=lambda p: p.name or str(p))
        pagina = st.radio("Página", ["Treino", "Avaliação", "Vistas", "Ponte LLM", "Exportação"])
    return diretorio, pagina


# ====================== PÁGINAS ======================

def pagina_treino(diretorio: Path):
    st.header("📉 Pré-treino")
    config = ler_config_execucao(diretorio)
    manifesto = ler_manifesto(diretorio)
    col1, col2, col3 = st.columns(3)
    col1.metric("Épocas configuradas", config.epochs)
    col2.metric("Checkpoints", len(manifesto.get("checkpoints", [])))
    col3.metric("Modo", config.modo_alinhamento)
    metricas = carregar_metricas(diretorio)
    if metricas:
        st.plotly_chart(plot_curvas_perda(metricas), use_container_width=True)
        st.dataframe(pd.DataFrame(metricas), use_container_width=True)
    else:
        st.info("Sem linhas em metricas.jsonl")
    with st.expander("config.json"):
        st.json(config.to_dict())


def pagina_avaliacao(diretorio: Path):
    st.header("🎯 Zero-shot e recuperação")
    relatorios = carregar_relatorios(diretorio)
    splits = {n: r for n, r in relatorios.items() if "top1" in r}
    if not splits:
        st.info("Execute eval-zeroshot para gerar relatorios/")
        return
    st.plotly_chart(plot_relatorios(splits), use_container_width=True)
    st.dataframe(pd.DataFrame([dict(split=n, top1=r["top1"], top5=r["top5"], n=r["n"])
                               for n, r in splits.items()]), use_container_width=True)
    if "recuperacao" in relatorios:
        st.subheader("Última recuperação")
        st.dataframe(pd.DataFrame(relatorios["recuperacao"]["ranking"]), use_container_width=True)


def pagina_vistas(diretorio: Path):
    st.header("🖼️ Nuvens e vistas candidatas")
    manifesto = diretorio / "triplets.jsonl"
    if not manifesto.exists():
        st.info("Sem triplets.jsonl")
        return
    df = read_triplet_manifest(manifesto)
    linha = df[df["id"] == st.selectbox("Nuvem", df["id"].tolist())].iloc[0]
    config = ler_config_execucao(diretorio)
    cloud = read_point_file(diretorio / linha["points_path"], linha["id"])
    st.caption(f"{linha['parent']} / {linha['sub']}")
    col1, col2 = st.columns([1, 2])
    col1.plotly_chart(plot_nuvem(cloud), use_container_width=True)
    canal = col2.radio("Canal", ["rgb", "depth"], horizontal=True)
    candidatos = render_candidate_views(cloud, config.image_size, config.image_size)
    col2.plotly_chart(plot_grade_vistas(candidatos, canal, destacadas=linha["view_angle_indices"]),
                      use_container_width=True)


def pagina_ponte(diretorio: Path):
    st.header("💬 Ponte LLM")
    pasta = diretorio / "llm"
    if (pasta / "metricas.jsonl").exists() and read_jsonl(pasta / "metricas.jsonl"):
        st.plotly_chart(plot_perda_ponte(read_jsonl(pasta / "metricas.jsonl")), use_container_width=True)
    for nome, titulo in (("decodificacoes.jsonl", "Conversas de treino"),
                         ("decodificacoes_retidas.jsonl", "Nuvens retidas")):
        if (pasta / nome).exists():
            df = pd.DataFrame(read_jsonl(pasta / nome))
            st.subheader(f"{titulo}: {int(df['exact_match'].sum())}/{len(df)} exatas")
            st.dataframe(df, use_container_width=True)


def pagina_exportacao(diretorio: Path):
    st.header("📤 Exportação")
    if st.button("Exportar CSV, Excel e HTML"):
        arquivos = exportar_execucao(diretorio)
        st.success(f"{len(arquivos)} arquivos em {diretorio / 'exportacao'}")
        for nome, caminho in arquivos.items():
            st.download_button(nome, data=Path(caminho).read_bytes(), file_name=Path(caminho).name)


# ====================== APLICAÇÃO PRINCIPAL ======================
PAGINAS = {
    "Treino": pagina_treino,
    "Avaliação": pagina_avaliacao,
    "Vistas": pagina_vistas,
    "Ponte LLM": pagina_ponte,
    "Exportação": pagina_exportacao,
}


def main():
    diretorio, pagina = create_sidebar()
    if diretorio is None:
        st.title("🧊 Explorador JM3D")
        st.markdown("Aponte a raiz para um diretório criado por `python cli.py pretrain`.")
        return
    PAGINAS[pagina](diretorio)


if __name__ == "__main__":
    main()
