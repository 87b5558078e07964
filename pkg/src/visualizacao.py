"""
VISUALIZAÇÃO DE EXECUÇÕES
Curvas de perda, grade de vistas candidatas, nuvem 3D e barras de métricas
Versão 1.0
"""
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from src.avaliacao_zeroshot import RetrievalResult
from src.models import CandidateViewSet, PointCloud

TERMOS_PERDA = ("contraste_nuvem_juncao", "contraste_nuvem_texto", "contraste_texto_juncao",
                "classificacao_pai", "total")

ROTULOS_TERMOS = {
    "contraste_nuvem_juncao": "Nuvem ↔ junção",
    "contraste_nuvem_texto": "Nuvem ↔ texto",
    "contraste_texto_juncao": "Texto ↔ junção",
    "classificacao_pai": "Classe pai",
    "total": "Total",
}


def _layout_padrao(fig: go.Figure, titulo: str, altura: int = 450) -> go.Figure:
    fig.update_layout(
        title={'text': titulo, 'font': {'size': 18, 'color': 'darkblue'}},
        hovermode='closest',
        legend=dict(yanchor="top", y=0.99, xanchor="right", x=0.99,
                    bgcolor='rgba(255, 255, 255, 0.8)', bordercolor='gray', borderwidth=1),
        height=altura,
        template='plotly_white',
    )
    return fig


def plot_curvas_perda(metricas: Sequence[Mapping[str, float]],
                      termos: Sequence[str] = TERMOS_PERDA) -> go.Figure:
    """
    Curvas por época dos termos da perda (linhas de metricas.jsonl)

    Raises:
        ValueError: se não houver linhas ou a coluna epoca faltar
    """
    df = pd.DataFrame(list(metricas))
    if df.empty or "epoca" not in df:
        raise ValueError("Métricas vazias ou sem a coluna 'epoca'")
    fig = go.Figure()
    for termo in termos:
        if termo not in df:
            continue
        fig.add_trace(go.Scatter(
            x=df["epoca"], y=df[termo], mode='lines',
            name=ROTULOS_TERMOS.get(termo, termo),
            line=dict(width=3 if termo == "total" else 1.5),
            hovertemplate='época %{x}<br>%{y:.4f}<extra></extra>'
        ))
    fig.update_xaxes(title_text='Época')
    fig.update_yaxes(title_text='Perda')
    return _layout_padrao(fig, 'Pré-treino: termos da perda')


def plot_grade_vistas(candidatos: CandidateViewSet, canal: str = "rgb",
                      colunas: int = 6, destacadas: Optional[Sequence[int]] = None) -> go.Figure:
    """
    Grade com as 30 vistas candidatas; destacadas recebem o ângulo em negrito

    Args:
        canal: 'rgb' ou 'depth'
    """
    if canal not in ("rgb", "depth"):
        raise ValueError(f"Canal inválido: {canal!r}")
    destacadas = set(destacadas or [])
    vistas = candidatos.views
    linhas = int(np.ceil(len(vistas) / colunas))
    titulos = [f"<b>{v.angle_deg:.0f}°</b>" if v.angle_index in destacadas else f"{v.angle_deg:.0f}°"
               for v in vistas]
    fig = make_subplots(rows=linhas, cols=colunas, subplot_titles=titulos,
                        horizontal_spacing=0.01, vertical_spacing=0.05)
    for i, vista in enumerate(vistas):
        linha, coluna = divmod(i, colunas)
        if canal == "rgb":
            traco = go.Image(z=np.clip(vista.rgb * 255.0, 0, 255).astype(np.uint8))
        else:
            traco = go.Heatmap(z=vista.depth[::-1], colorscale='Viridis', showscale=False)
        fig.add_trace(traco, row=linha + 1, col=coluna + 1)
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    return _layout_padrao(fig, f'Vistas candidatas ({canal})', altura=140 * linhas + 80)


def plot_nuvem(cloud: PointCloud, cor: Optional[np.ndarray] = None, tamanho: float = 2.0) -> go.Figure:
    pts = cloud.points
    fig = go.Figure(go.Scatter3d(
        x=pts[:, 0], y=pts[:, 1], z=pts[:, 2], mode='markers',
        marker=dict(size=tamanho, color=pts[:, 2] if cor is None else cor, colorscale='Viridis'),
        hoverinfo='skip'
    ))
    fig.update_layout(scene=dict(aspectmode='data'))
    return _layout_padrao(fig, f'Nuvem {cloud.id} ({len(pts)} pontos)', altura=500)


def plot_relatorios(relatorios: Mapping[str, Mapping[str, float]]) -> go.Figure:
    """Barras de top-1/top-5 por split"""
    nomes = list(relatorios)
    fig = go.Figure()
    for metrica, cor in (("top1", 'royalblue'), ("top5", 'lightsteelblue')):
        fig.add_trace(go.Bar(
            x=nomes, y=[relatorios[n].get(metrica, 0.0) for n in nomes], name=metrica,
            marker_color=cor, hovertemplate='%{x}: %{y:.3f}<extra></extra>'
        ))
    fig.update_layout(barmode='group')
    fig.update_yaxes(title_text='Acurácia', range=[0, 1])
    return _layout_padrao(fig, 'Zero-shot por split')


def plot_recuperacao(resultado: RetrievalResult) -> go.Figure:
    ids = resultado.ids
    sims = [s for _, s in resultado.ranking]
    fig = go.Figure(go.Bar(x=sims[::-1], y=ids[::-1], orientation='h', marker_color='darkorange',
                           hovertemplate='%{y}: %{x:.4f}<extra></extra>'))
    fig.update_xaxes(title_text='Similaridade cosseno')
    return _layout_padrao(fig, f'Recuperação para {resultado.query_id}', altura=120 + 40 * len(ids))


def plot_perda_ponte(metricas: Sequence[Mapping[str, float]]) -> go.Figure:
    df = pd.DataFrame(list(metricas))
    if df.empty:
        raise ValueError("Sem métricas da ponte")
    fig = go.Figure(go.Scatter(x=df["passo"], y=df["perda"], mode='lines+markers', name='SFT'))
    fig.update_xaxes(title_text='Passo')
    fig.update_yaxes(title_text='Perda SFT', type='log')
    return _layout_padrao(fig, 'Ponte LLM: perda supervisionada')


def figuras_da_execucao(metricas: Sequence[Mapping[str, float]],
                        relatorios: Mapping[str, Mapping[str, float]],
                        metricas_ponte: Sequence[Mapping[str, float]] = ()) -> Dict[str, go.Figure]:
    """Figuras disponíveis para um diretório de execução (as vazias são omitidas)"""
    figuras: Dict[str, go.Figure] = {}
    if metricas:
        figuras["curvas_perda"] = plot_curvas_perda(metricas)
    splits = {k: v for k, v in relatorios.items() if "top1" in v}
    if splits:
        figuras["zeroshot"] = plot_relatorios(splits)
    if metricas_ponte:
        figuras["ponte"] = plot_perda_ponte(metricas_ponte)
    return figuras


def listar_termos(metricas: Sequence[Mapping[str, float]]) -> List[str]:
    return [t for t in TERMOS_PERDA if metricas and t in metricas[0]]
